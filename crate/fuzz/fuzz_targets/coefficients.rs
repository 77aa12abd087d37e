#![no_main]

use libfuzzer_sys::fuzz_target;
use spinodal::config::parse_coefficients;
use spinodal::spectral::SpectralField;

fuzz_target!(|s: &str| {
    if let Ok(v) = parse_coefficients(s) {
        assert!(v.iter().all(|x| x.is_finite()));
        let _ = SpectralField::from_padded(&v, 16);
    }
});
