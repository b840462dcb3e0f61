//! Run with: `cargo +nightly fuzz run checkpoint`

#![no_main]

use libfuzzer_sys::fuzz_target;
use sentinel_core::captioner::parse_checkpoint;

fuzz_target!(|data: &str| {
    if let Ok(c) = parse_checkpoint(data) {
        assert_eq!(parse_checkpoint(&c.to_text()).unwrap(), c);
    }
});
