#![no_main]

use libfuzzer_sys::fuzz_target;
use nalgebra::DVector;
use strategio::geometry::Region;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(region) = Region::from_json_str(text) {
        let round = region.to_json_string().expect("accepted region must serialize");
        Region::from_json_str(&round).expect("serialized region must re-parse");
        if let Some(dim) = region.dim() {
            if dim <= 64 {
                let origin = DVector::zeros(dim);
                let inside = region.contains(&origin);
                // A strictly interior point stays inside under a tighter margin test.
                if region.contains_with_margin(&origin, 1e-9) {
                    assert!(inside, "margin containment must imply plain containment");
                }
            }
        }
    }
});
