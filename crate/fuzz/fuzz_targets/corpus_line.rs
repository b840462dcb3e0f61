//! Run with: `cargo +nightly fuzz run corpus_line`

#![no_main]

use libfuzzer_sys::fuzz_target;
use sentinel_core::dataset::parse_corpus;

fuzz_target!(|data: &str| {
    if let Ok(c) = parse_corpus(data) {
        assert!(c.scenes.iter().all(|s| !s.references.is_empty()));
    }
});
