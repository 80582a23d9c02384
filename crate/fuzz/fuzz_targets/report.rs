#![no_main]

use libfuzzer_sys::fuzz_target;
use orfel::engine::DetectionReport;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(report) = DetectionReport::from_json(text) {
        DetectionReport::from_json(&report.to_json()).expect("written report parses");
    }
});
