#![no_main]

use libfuzzer_sys::fuzz_target;
use sfe_core::io::parse_truth;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(file) = parse_truth(text) {
        // parsing validates both, so neither may fail afterwards
        let config = file.config().expect("validated market");
        assert_eq!(config.n_suppliers(), file.n);
        let (lo, hi) = config.feasible_demand();
        assert!(lo <= hi);
        file.thetas().expect("validated costs");
    }
});
