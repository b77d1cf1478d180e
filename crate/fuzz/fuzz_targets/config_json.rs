#![no_main]

use libfuzzer_sys::fuzz_target;
use strategio::harness::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(config) = ExperimentConfig::from_json_str(text) {
        // Validation must classify, not crash.
        let _ = config.validate();
        let round = config.to_json_string().expect("accepted config must serialize");
        let again =
            ExperimentConfig::from_json_str(&round).expect("serialized config must re-parse");
        assert_eq!(
            config.validate().is_ok(),
            again.validate().is_ok(),
            "round-trip must preserve validity"
        );
    }
});
