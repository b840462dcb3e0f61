//! Run with: `cargo +nightly fuzz run config`

#![no_main]

use libfuzzer_sys::fuzz_target;
use sentinel_cli::RunConfig;

fuzz_target!(|data: &str| {
    let _ = RunConfig::parse(data);
});
