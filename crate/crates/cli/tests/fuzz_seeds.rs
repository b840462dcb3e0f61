//! Replays the checked-in fuzz seeds, plus truncated and byte-flipped
//! variants, through every parser.

use std::path::PathBuf;

use sentinel_cli::RunConfig;
use sentinel_core::analysis::parse_traces;
use sentinel_core::captioner::parse_checkpoint;
use sentinel_core::dataset::{parse_corpus, parse_vocab};

fn seeds(target: &str) -> Vec<String> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<String> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| std::fs::read_to_string(e.unwrap().path()).unwrap())
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn variants(seed: &str) -> Vec<String> {
    let bytes = seed.as_bytes();
    let mut out = Vec::new();
    let step = (bytes.len() / 64).max(1);
    for cut in (0..bytes.len()).step_by(step) {
        out.push(String::from_utf8_lossy(&bytes[..cut]).into_owned());
        for flip in [b'0', b'-', b'\n', b',', b'"', b'e'] {
            let mut b = bytes.to_vec();
            b[cut] = flip;
            out.push(String::from_utf8_lossy(&b).into_owned());
        }
    }
    out
}

#[test]
fn corpus_seeds() {
    for s in seeds("corpus_line") {
        assert!(parse_corpus(&s).is_ok());
        for v in variants(&s) {
            if let Ok(c) = parse_corpus(&v) {
                assert!(c.scenes.iter().all(|s| !s.references.is_empty()));
            }
        }
    }
}

#[test]
fn vocab_seeds() {
    for s in seeds("vocab") {
        assert!(parse_vocab(&s).is_ok());
        for v in variants(&s) {
            if let Ok(v) = parse_vocab(&v) {
                assert_eq!(parse_vocab(&v.to_csv()).unwrap(), v);
            }
        }
    }
}

#[test]
fn checkpoint_seeds() {
    for s in seeds("checkpoint") {
        assert!(parse_checkpoint(&s).is_ok());
        for v in variants(&s) {
            if let Ok(c) = parse_checkpoint(&v) {
                assert_eq!(parse_checkpoint(&c.to_text()).unwrap(), c);
            }
        }
    }
}

#[test]
fn trace_seeds() {
    for s in seeds("traces") {
        assert!(parse_traces(&s).is_ok());
        for v in variants(&s) {
            if let Ok(t) = parse_traces(&v) {
                let k = t.regions();
                assert!(t.records.iter().all(|r| r.alpha_hat.len() >= k && (0.0..=1.0).contains(&r.beta)));
            }
        }
    }
}

#[test]
fn config_seeds() {
    for s in seeds("config") {
        assert!(RunConfig::parse(&s).is_ok(), "{s}");
        for v in variants(&s) {
            let _ = RunConfig::parse(&v);
        }
    }
}
