#![no_main]

use libfuzzer_sys::fuzz_target;
use strategio::harness::ingest_csv_from_reader;

// First byte selects the pre-treatment cutoff (1..=8); the rest is the CSV.
// Keep this framing in lockstep with the corpus replay test in
// crates/strategio/tests/corpus_replay.rs.
fuzz_target!(|data: &[u8]| {
    let Some((&t0_byte, csv)) = data.split_first() else {
        return;
    };
    let t0 = 1 + (t0_byte % 8) as usize;
    if let Ok(panel) = ingest_csv_from_reader(csv, t0) {
        let round = panel.to_csv_string().expect("accepted panel must serialize");
        let again =
            ingest_csv_from_reader(round.as_bytes(), t0).expect("serialized panel must re-ingest");
        assert_eq!(panel, again, "csv round-trip must be lossless");
    }
});
