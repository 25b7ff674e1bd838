#![no_main]
use libfuzzer_sys::fuzz_target;
use mixalign::io::{format_pts, parse_pts};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(shape) = parse_pts(text) {
        // Whatever parses must survive a write/read cycle with its point count.
        let again = parse_pts(&format_pts(&shape)).expect("formatted shape reparses");
        assert_eq!(again.num_points(), shape.num_points());
    }
});
