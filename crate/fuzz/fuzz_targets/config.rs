#![no_main]
use libfuzzer_sys::fuzz_target;
use mixalign::cascade::TrainConfig;
use mixalign::io::{config_to_string, parse_synth_config, parse_train_config};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = parse_train_config(text, TrainConfig::default()) {
        let again = parse_train_config(&config_to_string(&cfg), TrainConfig::default()).expect("printed config reparses");
        assert_eq!(again, cfg);
    }
    let _ = parse_synth_config(text);
});
