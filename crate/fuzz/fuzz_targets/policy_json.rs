#![no_main]

use libfuzzer_sys::fuzz_target;
use nalgebra::DVector;
use strategio::policies::InterventionPolicy;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(policy) = InterventionPolicy::from_json_str(text) {
        let round = policy.to_json_string().expect("accepted policy must serialize");
        InterventionPolicy::from_json_str(&round).expect("serialized policy must re-parse");
        // Assignment must never panic on well-formed submissions; keep the
        // probe sizes small so arbitrary inputs stay cheap.
        let (t0, k) = (policy.t0(), policy.k());
        if t0 <= 64 && k <= 16 {
            let _ = policy.assign(&DVector::zeros(t0));
            let ramp = DVector::from_fn(t0, |i, _| i as f64 - 0.5 * t0 as f64);
            let _ = policy.assign(&ramp);
        }
    }
});
