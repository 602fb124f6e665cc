#![no_main]

use libfuzzer_sys::fuzz_target;
use sfe_core::io::{read_dataset, write_dataset};

fuzz_target!(|data: &[u8]| {
    let beta = [0.1, 0.12, 0.14, 0.16];
    let Ok(obs) = read_dataset(data, Some(&beta)) else {
        return;
    };
    // whatever parses must survive a write and re-read unchanged
    let mut buf = Vec::new();
    write_dataset(&mut buf, &obs).expect("writing parsed observations");
    let again = read_dataset(buf.as_slice(), None).expect("re-reading written dataset");
    assert_eq!(obs, again);
});
