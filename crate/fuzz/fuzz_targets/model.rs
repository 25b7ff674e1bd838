#![no_main]
use libfuzzer_sys::fuzz_target;
use mixalign::io::{decode_model, encode_model};

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = decode_model(data) {
        // Decoding is strict, so an accepted buffer is already canonical.
        assert_eq!(encode_model(&model), data);
    }
});
