#![no_main]

use libfuzzer_sys::fuzz_target;
use spi_core::metrics::parse_topk_list;
use spi_core::store::Component;
use spi_core::{KfFloor, TailRange};

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(t) = s.parse::<TailRange>() {
        assert_eq!(t.to_string().parse::<TailRange>().unwrap(), t);
    }
    if let Ok(f) = s.parse::<KfFloor>() {
        assert_eq!(f.to_string().parse::<KfFloor>().unwrap(), f);
    }
    if let Ok(ks) = parse_topk_list(s) {
        assert!(!ks.is_empty() && ks.iter().all(|k| *k > 0));
    }
    if let Ok(c) = s.parse::<Component>() {
        assert_eq!(c.as_str(), s);
    }
});
