#![no_main]

use libfuzzer_sys::fuzz_target;
use spinodal::config::{functional_text, parse_functional};
use spinodal::spectral::SpectralField;

fuzz_target!(|s: &str| {
    if let Ok(f) = parse_functional(s) {
        assert_eq!(parse_functional(&functional_text(&f)).unwrap(), f);
        let (lo, hi) = f.bounds();
        let k = f.mode();
        if k <= 64 {
            let v = f.eval(&SpectralField::single_mode(0.0, k, 0.3, k));
            assert!(v >= lo && v <= hi);
        }
    }
});
