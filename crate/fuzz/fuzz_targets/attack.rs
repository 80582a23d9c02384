#![no_main]

use libfuzzer_sys::fuzz_target;
use orfel::attack::{evaluate_recall, AttackGroundTruth, AttackSpec, DEFAULT_COVERAGE};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(spec) = AttackSpec::from_json(text) {
        if spec.validate().is_ok() {
            let range = spec.rating_range().expect("valid spec has ratings");
            assert!(range.start() <= range.end());
        }
    }
    if let Ok(truth) = AttackGroundTruth::from_json(text) {
        let again = AttackGroundTruth::from_json(&truth.to_json()).expect("written truth parses");
        assert_eq!(again, truth);
        if let Ok(summary) = evaluate_recall(&[], &truth, DEFAULT_COVERAGE) {
            assert_eq!(summary.caught, 0);
        }
    }
});
