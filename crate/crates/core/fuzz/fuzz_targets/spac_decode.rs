#![no_main]

use libfuzzer_sys::fuzz_target;
use spi_core::store::decode_record;

fuzz_target!(|data: &[u8]| {
    if let Ok(r) = decode_record(data) {
        assert_eq!(r.rows * r.cols, r.data.len());
        assert!(r.data.iter().all(|x| x.is_finite()));
    }
});
