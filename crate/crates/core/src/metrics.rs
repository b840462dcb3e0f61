//! Corpus-level BLEU with clipped n-gram counts and a brevity penalty.

use std::collections::HashMap;
use std::hash::Hash;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BleuReport {
    /// `scores[n - 1]` is BLEU-n: geometric mean of precisions `1..=n`
    /// times the brevity penalty.
    pub scores: Vec<f64>,
    /// Clipped n-gram precision per order.
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub candidate_length: usize,
    pub reference_length: usize,
}

impl BleuReport {
    /// BLEU-n for `1 <= n <= max_n`.
    pub fn bleu(&self, n: usize) -> f64 {
        self.scores[n - 1]
    }
}

fn ngram_counts<T: Hash + Eq>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if n <= tokens.len() {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Reference length closest to `c`; ties go to the shorter reference.
fn closest_length<T>(c: usize, refs: &[Vec<T>]) -> usize {
    refs.iter()
        .map(|r| r.len())
        .min_by_key(|&r| (r.abs_diff(c), r))
        .unwrap_or(0)
}

pub fn bleu<T: Hash + Eq>(candidates: &[Vec<T>], references: &[Vec<Vec<T>>], max_n: usize) -> Result<BleuReport> {
    if candidates.is_empty() {
        return Err(Error::contract("BLEU over an empty corpus"));
    }
    if candidates.len() != references.len() {
        return Err(Error::contract(format!(
            "{} candidates but {} reference sets",
            candidates.len(),
            references.len()
        )));
    }
    if max_n == 0 {
        return Err(Error::contract("BLEU order must be at least 1"));
    }
    if let Some(i) = references.iter().position(|r| r.is_empty()) {
        return Err(Error::contract(format!("candidate {i} has no reference")));
    }

    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let mut c_len = 0;
    let mut r_len = 0;
    for (cand, refs) in candidates.iter().zip(references) {
        c_len += cand.len();
        r_len += closest_length(cand.len(), refs);
        for n in 1..=max_n {
            let mut max_ref: HashMap<&[T], usize> = HashMap::new();
            for r in refs {
                for (g, c) in ngram_counts(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            for (g, c) in ngram_counts(cand, n) {
                matched[n - 1] += c.min(max_ref.get(g).copied().unwrap_or(0));
                total[n - 1] += c;
            }
        }
    }

    let precisions: Vec<f64> = matched
        .iter()
        .zip(&total)
        .map(|(&m, &t)| if t == 0 { 0.0 } else { m as f64 / t as f64 })
        .collect();
    let brevity_penalty = if c_len >= r_len {
        1.0
    } else if c_len == 0 {
        0.0
    } else {
        (1.0 - r_len as f64 / c_len as f64).exp()
    };
    let mut scores = Vec::with_capacity(max_n);
    let mut log_sum = 0.0;
    let mut zero = false;
    for (i, &p) in precisions.iter().enumerate() {
        if p == 0.0 {
            zero = true;
        } else {
            log_sum += p.ln();
        }
        let n = (i + 1) as f64;
        scores.push(if zero { 0.0 } else { brevity_penalty * (log_sum / n).exp() });
    }
    Ok(BleuReport {
        scores,
        precisions,
        brevity_penalty,
        candidate_length: c_len,
        reference_length: r_len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn perfect_match_scores_one() {
        let c = vec![toks("a red circle on the grid")];
        let r = vec![vec![toks("a red circle on the grid")]];
        let rep = bleu(&c, &r, 4).unwrap();
        assert!(rep.scores.iter().all(|&s| s == 1.0));
        assert_eq!(rep.brevity_penalty, 1.0);
    }

    #[test]
    fn closest_reference_rule_prefers_shorter_on_ties() {
        let refs = vec![toks("a b c d e f"), toks("a b")];
        assert_eq!(closest_length(4, &refs), 2);
        assert_eq!(closest_length(5, &refs), 6);
    }

    #[test]
    fn errors() {
        let empty: Vec<Vec<&str>> = vec![];
        assert!(bleu(&empty, &[], 4).is_err());
        assert!(bleu(&[toks("a")], &[vec![]], 4).is_err());
        assert!(bleu(&[toks("a")], &[], 4).is_err());
    }
}
