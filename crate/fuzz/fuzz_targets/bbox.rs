#![no_main]
use libfuzzer_sys::fuzz_target;
use mixalign::io::{format_bbox, parse_bbox};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(rect) = parse_bbox(text) {
        assert!(rect.width() >= 0.0 && rect.height() >= 0.0);
        let _ = parse_bbox(&format_bbox(&rect));
    }
});
