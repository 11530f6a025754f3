#![no_main]

use libfuzzer_sys::fuzz_target;
use spi_core::store::{decode_record, encode_record};

// Anything the decoder accepts must survive a re-encode bit for bit.
fuzz_target!(|data: &[u8]| {
    let Ok(first) = decode_record(data) else {
        return;
    };
    let bytes = encode_record(&first).expect("decoded records are valid");
    let second = decode_record(&bytes).expect("encoded records decode");
    assert_eq!(first.key(), second.key());
    assert_eq!(
        (first.rows, first.cols, first.condition),
        (second.rows, second.cols, second.condition)
    );
    assert!(first
        .data
        .iter()
        .map(|x| x.to_bits())
        .eq(second.data.iter().map(|x| x.to_bits())));
    assert_eq!(encode_record(&second).unwrap(), bytes);
});
