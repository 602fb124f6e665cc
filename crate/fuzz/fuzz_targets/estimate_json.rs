#![no_main]

use libfuzzer_sys::fuzz_target;
use sfe_core::io::parse_estimate;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(file) = parse_estimate(text) {
        if let Ok(thetas) = file.thetas() {
            assert_eq!(thetas.len(), file.theta1.len());
        }
    }
});
