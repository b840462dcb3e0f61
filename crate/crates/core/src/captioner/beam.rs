use std::cmp::Ordering;

use crate::error::{Error, Result};

/// Anything that can score the next token given a decoding state.
pub trait SequenceScorer {
    type State: Clone;
    type Attention: Clone;

    fn initial(&mut self) -> Result<Self::State>;

    /// Feed `prev` and return the next state, log-probabilities over the
    /// vocabulary and whatever the step wants to report.
    fn advance(&mut self, state: &Self::State, prev: usize) -> Result<(Self::State, Vec<f64>, Self::Attention)>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamConfig {
    pub beam: usize,
    /// Upper bound on emitted tokens, `<end>` included.
    pub max_len: usize,
    /// Token fed before the first step.
    pub start: usize,
    /// Token that finishes a hypothesis.
    pub end: Option<usize>,
    /// Tokens that are never emitted.
    pub banned: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis<A> {
    /// Emitted tokens, including a final `<end>` when one was produced.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    /// One entry per emitted token.
    pub attention: Vec<A>,
    pub finished: bool,
}

impl<A> Hypothesis<A> {
    /// Log-probability divided by the number of emitted tokens.
    pub fn score(&self) -> f64 {
        if self.tokens.is_empty() {
            0.0
        } else {
            self.log_prob / self.tokens.len() as f64
        }
    }

    /// Tokens without the trailing `<end>`.
    pub fn content(&self, end: usize) -> &[usize] {
        match self.tokens.split_last() {
            Some((&last, rest)) if last == end => rest,
            _ => &self.tokens,
        }
    }
}

fn by_logprob_then_tokens(a: (f64, &[usize]), b: (f64, &[usize])) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

struct Active<S, A> {
    state: S,
    hyp: Hypothesis<A>,
}

/// Beam search ranked by length-normalized log-probability. Finished
/// hypotheses leave the beam, shrinking the number of live slots; any still
/// alive after `max_len` tokens are returned unfinished.
pub fn beam_search<S: SequenceScorer>(scorer: &mut S, cfg: &BeamConfig) -> Result<Vec<Hypothesis<S::Attention>>> {
    if cfg.beam == 0 {
        return Err(Error::contract("beam size must be at least 1"));
    }
    let mut active = vec![Active {
        state: scorer.initial()?,
        hyp: Hypothesis {
            tokens: Vec::new(),
            log_prob: 0.0,
            attention: Vec::new(),
            finished: false,
        },
    }];
    let mut finished: Vec<Hypothesis<S::Attention>> = Vec::new();

    for _ in 0..cfg.max_len {
        if active.is_empty() {
            break;
        }
        let mut expanded = Vec::with_capacity(active.len());
        let mut candidates: Vec<(f64, Vec<usize>, usize, usize)> = Vec::new();
        for (i, a) in active.iter().enumerate() {
            let prev = a.hyp.tokens.last().copied().unwrap_or(cfg.start);
            let (state, log_probs, att) = scorer.advance(&a.state, prev)?;
            for (tok, &lp) in log_probs.iter().enumerate() {
                if cfg.banned.contains(&tok) {
                    continue;
                }
                let mut tokens = a.hyp.tokens.clone();
                tokens.push(tok);
                candidates.push((a.hyp.log_prob + lp, tokens, i, tok));
            }
            expanded.push((state, att));
        }
        candidates.sort_by(|a, b| by_logprob_then_tokens((a.0, &a.1), (b.0, &b.1)));
        let slots = cfg.beam - finished.len();
        let mut next = Vec::with_capacity(slots);
        for (log_prob, tokens, parent, tok) in candidates.into_iter().take(slots) {
            let mut attention = active[parent].hyp.attention.clone();
            attention.push(expanded[parent].1.clone());
            let done = cfg.end == Some(tok);
            let hyp = Hypothesis {
                tokens,
                log_prob,
                attention,
                finished: done,
            };
            if done {
                finished.push(hyp);
            } else {
                next.push(Active {
                    state: expanded[parent].0.clone(),
                    hyp,
                });
            }
        }
        active = next;
    }

    finished.extend(active.into_iter().map(|a| a.hyp));
    finished.sort_by(|a, b| {
        b.score()
            .total_cmp(&a.score())
            .then_with(|| a.tokens.cmp(&b.tokens))
    });
    Ok(finished)
}

/// Highest-probability token at every step; ties go to the lowest id.
pub fn greedy_search<S: SequenceScorer>(scorer: &mut S, cfg: &BeamConfig) -> Result<Hypothesis<S::Attention>> {
    let mut state = scorer.initial()?;
    let mut hyp = Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        attention: Vec::new(),
        finished: false,
    };
    for _ in 0..cfg.max_len {
        let prev = hyp.tokens.last().copied().unwrap_or(cfg.start);
        let (next, log_probs, att) = scorer.advance(&state, prev)?;
        let best = log_probs
            .iter()
            .enumerate()
            .filter(|(t, _)| !cfg.banned.contains(t))
            .fold(None, |best: Option<(usize, f64)>, (t, &lp)| match best {
                Some((_, b)) if b.total_cmp(&lp) != Ordering::Less => best,
                _ => Some((t, lp)),
            });
        let Some((tok, lp)) = best else {
            return Err(Error::contract("every token is banned"));
        };
        hyp.tokens.push(tok);
        hyp.log_prob += lp;
        hyp.attention.push(att);
        state = next;
        if cfg.end == Some(tok) {
            hyp.finished = true;
            break;
        }
    }
    Ok(hyp)
}
