#![no_main]

use libfuzzer_sys::fuzz_target;
use strategio::estimation::LearnedBetas;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(learned) = LearnedBetas::from_json_str(text) {
        let round = learned.to_json_string().expect("accepted estimate must serialize");
        let again = LearnedBetas::from_json_str(&round).expect("serialized estimate must re-parse");
        assert_eq!(learned, again, "json round-trip must be lossless");
    }
});
