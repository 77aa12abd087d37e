#![no_main]

use libfuzzer_sys::fuzz_target;
use spinodal::config::{parse_config, validate_config};

fuzz_target!(|s: &str| {
    if let Ok(cfg) = parse_config(s) {
        let _ = validate_config(&cfg);
        let manifest = cfg.to_manifest();
        let back = parse_config(&manifest).expect("manifest parses");
        assert_eq!(back.to_manifest(), manifest);
    }
});
