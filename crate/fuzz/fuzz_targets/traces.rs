//! Run with: `cargo +nightly fuzz run traces`

#![no_main]

use libfuzzer_sys::fuzz_target;
use sentinel_core::analysis::parse_traces;

fuzz_target!(|data: &str| {
    if let Ok(t) = parse_traces(data) {
        let k = t.regions();
        assert!(t.records.iter().all(|r| r.alpha_hat.len() >= k && (0.0..=1.0).contains(&r.beta)));
    }
});
