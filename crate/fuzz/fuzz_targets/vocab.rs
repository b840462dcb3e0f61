//! Run with: `cargo +nightly fuzz run vocab`

#![no_main]

use libfuzzer_sys::fuzz_target;
use sentinel_core::dataset::parse_vocab;

fuzz_target!(|data: &str| {
    if let Ok(v) = parse_vocab(data) {
        assert_eq!(parse_vocab(&v.to_csv()).unwrap(), v);
    }
});
