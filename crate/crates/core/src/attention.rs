//! Spatial attention over the `k` grid regions and its adaptive extension.
//!
//! Spatial scores are `z = w_hᵀ tanh(W_v V + (W_g h) 1ᵀ)`, with `V` holding
//! one `d`-dimensional column per region. The adaptive variant appends a
//! sentinel score `w_hᵀ tanh(W_s s + W_g h)` (same `W_g`) and takes a joint
//! softmax over `k + 1` entries; the last entry is the sentinel gate `β`.
//!
//! The spatial context `c` is built from `softmax(z)`, which is exactly the
//! first `k` entries of the extended distribution renormalized by `1 - β`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{param_group, uniform};
use crate::tensor::{Graph, Shape, Tensor, Value};

param_group! {
    /// `w_v`, `w_g`, `w_s`: k × d; `w_h`: k; `w_p`: vocab × d;
    /// `proj_h`, `proj_s`: d × hidden single-layer transforms applied to the
    /// LSTM output and the sentinel before attention.
    pub struct AttentionParams {
        w_v, w_g, w_h, w_s, w_p, proj_h, proj_s,
    }
}

impl AttentionParams {
    pub fn init(rng: &mut impl Rng, k: usize, d: usize, hidden: usize, vocab: usize) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        AttentionParams {
            w_v: uniform(rng, &[k, d], bound),
            w_g: uniform(rng, &[k, d], bound),
            w_h: uniform(rng, &[k], bound),
            w_s: uniform(rng, &[k, d], bound),
            w_p: uniform(rng, &[vocab, d], bound),
            proj_h: uniform(rng, &[d, hidden], bound),
            proj_s: uniform(rng, &[d, hidden], bound),
        }
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> AttentionParams<Value> {
        self.map(&mut |_, t| g.leaf(t.clone(), trainable))
    }
}

/// Per-scene quantities shared by every decoding step.
#[derive(Clone, Copy, Debug)]
pub struct AttentionContext {
    /// Region features, `d × k`.
    pub v: Value,
    /// `W_v V`, `k × k`; independent of the step.
    pub wv_v: Value,
    ones_row: Value,
    pub k: usize,
    pub d: usize,
}

/// Everything one attention step produced.
#[derive(Clone, Copy, Debug)]
pub struct AttentionTrace {
    pub z: Value,
    /// Attention over the `k` regions.
    pub alpha: Value,
    /// Extended distribution over regions plus sentinel (`k + 1`); equals
    /// `alpha` for the spatial-only model.
    pub alpha_hat: Value,
    /// Sentinel gate; the constant 0 for the spatial-only model.
    pub beta: Value,
    pub c: Value,
    pub c_hat: Value,
}

impl AttentionContext {
    pub fn new(g: &mut Graph, p: &AttentionParams<Value>, v: Value) -> Result<Self> {
        let dims = g.shape(v).dims().to_vec();
        let [d, k] = dims[..] else {
            return Err(Error::Dimension {
                op: "attention features",
                left: g.shape(v).clone(),
                right: Shape::new([0, 0]),
            });
        };
        if k == 0 {
            return Err(Error::contract("attention over zero regions"));
        }
        let wv = g.shape(p.w_v).dims().to_vec();
        if wv != [k, d] {
            return Err(Error::Dimension {
                op: "attention W_v",
                left: Shape::new(wv),
                right: Shape::new([k, d]),
            });
        }
        let wv_v = g.matmul(p.w_v, v)?;
        let ones_row = g.constant(Tensor::filled(&[1, k], 1.0));
        Ok(AttentionContext { v, wv_v, ones_row, k, d })
    }
}

fn check_dim(g: &Graph, v: Value, d: usize, op: &'static str) -> Result<()> {
    if g.shape(v).dims() != [d] {
        return Err(Error::Dimension {
            op,
            left: g.shape(v).clone(),
            right: Shape::new([d]),
        });
    }
    Ok(())
}

/// Spatial scores `z` and the projected-hidden term `W_g h` reused by the
/// sentinel score.
fn spatial_scores(
    g: &mut Graph,
    p: &AttentionParams<Value>,
    ctx: &AttentionContext,
    h: Value,
) -> Result<(Value, Value)> {
    check_dim(g, h, ctx.d, "spatial_attention hidden")?;
    let gh = g.matmul(p.w_g, h)?;
    let gh_col = g.reshape(gh, &[ctx.k, 1])?;
    let broadcast = g.matmul(gh_col, ctx.ones_row)?;
    let pre = g.add(ctx.wv_v, broadcast)?;
    let act = g.tanh(pre);
    let z = g.matmul(p.w_h, act)?;
    Ok((z, gh))
}

/// `(alpha, c)` for the current hidden state.
pub fn spatial_attention(
    g: &mut Graph,
    p: &AttentionParams<Value>,
    ctx: &AttentionContext,
    h: Value,
) -> Result<(Value, Value)> {
    let (z, _) = spatial_scores(g, p, ctx, h)?;
    let alpha = g.softmax(z)?;
    let c = g.matmul(ctx.v, alpha)?;
    Ok((alpha, c))
}

/// Spatial-only step: `ĉ = c`, `β = 0`.
pub fn spatial_trace(
    g: &mut Graph,
    p: &AttentionParams<Value>,
    ctx: &AttentionContext,
    h: Value,
) -> Result<AttentionTrace> {
    let (z, _) = spatial_scores(g, p, ctx, h)?;
    let alpha = g.softmax(z)?;
    let c = g.matmul(ctx.v, alpha)?;
    let beta = g.constant(Tensor::scalar(0.0));
    Ok(AttentionTrace {
        z,
        alpha,
        alpha_hat: alpha,
        beta,
        c,
        c_hat: c,
    })
}

/// `β s + (1 − β) c`
pub fn mix(g: &mut Graph, beta: Value, s: Value, c: Value) -> Result<Value> {
    let one = g.constant(Tensor::scalar(1.0));
    let keep = g.sub(one, beta)?;
    let from_s = g.mul(beta, s)?;
    let from_c = g.mul(keep, c)?;
    g.add(from_s, from_c)
}

/// Adaptive step with the sentinel `s` competing against the `k` regions.
pub fn adaptive_attention(
    g: &mut Graph,
    p: &AttentionParams<Value>,
    ctx: &AttentionContext,
    h: Value,
    s: Value,
) -> Result<AttentionTrace> {
    check_dim(g, s, ctx.d, "adaptive_attention sentinel")?;
    let (z, gh) = spatial_scores(g, p, ctx, h)?;
    let ws = g.matmul(p.w_s, s)?;
    let pre = g.add(ws, gh)?;
    let act = g.tanh(pre);
    let sentinel_score = g.matmul(p.w_h, act)?;
    let sentinel_score = g.reshape(sentinel_score, &[1])?;
    let extended = g.concat(z, sentinel_score)?;
    let alpha_hat = g.softmax(extended)?;
    let beta = g.element(alpha_hat, ctx.k)?;

    let alpha = g.softmax(z)?;
    let c = g.matmul(ctx.v, alpha)?;
    let c_hat = mix(g, beta, s, c)?;
    Ok(AttentionTrace {
        z,
        alpha,
        alpha_hat,
        beta,
        c,
        c_hat,
    })
}

/// `p = softmax(W_p (ĉ + h))`
pub fn word_distribution(
    g: &mut Graph,
    p: &AttentionParams<Value>,
    c_hat: Value,
    h: Value,
) -> Result<Value> {
    let sum = g.add(c_hat, h)?;
    let logits = g.matmul(p.w_p, sum)?;
    g.softmax(logits)
}
