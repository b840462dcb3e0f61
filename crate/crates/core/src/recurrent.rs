//! Single-layer LSTM extended with a visual sentinel.
//!
//! Besides the usual hidden state and memory cell, every step exposes a
//! sentinel vector `s_t = g_t ⊙ tanh(m_t)` whose gate
//! `g_t = σ(W_x x_t + W_h h_{t-1})` reads the step input and the previous
//! hidden state. The sentinel gate has no bias.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{param_group, uniform};
use crate::tensor::{Graph, Shape, Tensor, Value};

param_group! {
    /// Gate weights (`*_x`: hidden × input, `*_h`: hidden × hidden, `*_b`:
    /// hidden) for the input, forget, output and candidate gates, plus the
    /// sentinel gate weights.
    pub struct LstmParams {
        input_x, input_h, input_b,
        forget_x, forget_h, forget_b,
        output_x, output_h, output_b,
        cell_x, cell_h, cell_b,
        sentinel_x, sentinel_h,
    }
}

impl LstmParams {
    /// Uniform `±1/√hidden` weights, zero biases except the forget gate (1.0).
    pub fn init(rng: &mut impl Rng, d_input: usize, hidden: usize) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let wx = |rng: &mut _| uniform(rng, &[hidden, d_input], bound);
        let input_x = wx(rng);
        let forget_x = wx(rng);
        let output_x = wx(rng);
        let cell_x = wx(rng);
        let sentinel_x = wx(rng);
        let wh = |rng: &mut _| uniform(rng, &[hidden, hidden], bound);
        LstmParams {
            input_h: wh(rng),
            forget_h: wh(rng),
            output_h: wh(rng),
            cell_h: wh(rng),
            sentinel_h: wh(rng),
            input_x,
            forget_x,
            output_x,
            cell_x,
            sentinel_x,
            input_b: Tensor::zeros(&[hidden]),
            forget_b: Tensor::filled(&[hidden], 1.0),
            output_b: Tensor::zeros(&[hidden]),
            cell_b: Tensor::zeros(&[hidden]),
        }
    }

    pub fn zeros(d_input: usize, hidden: usize) -> Self {
        let wx = || Tensor::zeros(&[hidden, d_input]);
        let wh = || Tensor::zeros(&[hidden, hidden]);
        let b = || Tensor::zeros(&[hidden]);
        LstmParams {
            input_x: wx(),
            input_h: wh(),
            input_b: b(),
            forget_x: wx(),
            forget_h: wh(),
            forget_b: b(),
            output_x: wx(),
            output_h: wh(),
            output_b: b(),
            cell_x: wx(),
            cell_h: wh(),
            cell_b: b(),
            sentinel_x: wx(),
            sentinel_h: wh(),
        }
    }

    pub fn d_input(&self) -> usize {
        self.input_x.dims()[1]
    }

    pub fn hidden(&self) -> usize {
        self.input_h.dims()[0]
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> LstmParams<Value> {
        self.map(&mut |_, t| g.leaf(t.clone(), trainable))
    }
}

/// One timestep's state bundle.
#[derive(Clone, Copy, Debug)]
pub struct DecoderStep {
    pub x: Value,
    pub h: Value,
    pub m: Value,
    /// Sentinel vector; `None` when the sentinel branch is disabled.
    pub s: Option<Value>,
    pub gate: Option<Value>,
}

fn check_vec(g: &Graph, v: Value, len: usize, op: &'static str) -> Result<()> {
    let s = g.shape(v);
    if s.dims() != [len] {
        return Err(Error::Dimension {
            op,
            left: s.clone(),
            right: Shape::new([len]),
        });
    }
    Ok(())
}

/// `w_x·x + w_h·h (+ b)`
fn affine2(g: &mut Graph, wx: Value, x: Value, wh: Value, h: Value, b: Option<Value>) -> Result<Value> {
    let a = g.matmul(wx, x)?;
    let c = g.matmul(wh, h)?;
    let sum = g.add(a, c)?;
    match b {
        Some(b) => g.add(sum, b),
        None => Ok(sum),
    }
}

/// Standard LSTM update. Returns `(h_t, m_t)`.
pub fn lstm_step(
    g: &mut Graph,
    p: &LstmParams<Value>,
    x: Value,
    h_prev: Value,
    m_prev: Value,
) -> Result<(Value, Value)> {
    let hidden = g.shape(p.input_h).dims()[0];
    let d_input = g.shape(p.input_x).dims()[1];
    check_vec(g, x, d_input, "lstm_step input")?;
    check_vec(g, h_prev, hidden, "lstm_step hidden")?;
    check_vec(g, m_prev, hidden, "lstm_step memory")?;

    let pre_i = affine2(g, p.input_x, x, p.input_h, h_prev, Some(p.input_b))?;
    let pre_f = affine2(g, p.forget_x, x, p.forget_h, h_prev, Some(p.forget_b))?;
    let pre_o = affine2(g, p.output_x, x, p.output_h, h_prev, Some(p.output_b))?;
    let pre_c = affine2(g, p.cell_x, x, p.cell_h, h_prev, Some(p.cell_b))?;
    let i = g.sigmoid(pre_i);
    let f = g.sigmoid(pre_f);
    let o = g.sigmoid(pre_o);
    let cand = g.tanh(pre_c);

    let keep = g.mul(f, m_prev)?;
    let write = g.mul(i, cand)?;
    let m = g.add(keep, write)?;
    let tm = g.tanh(m);
    let h = g.mul(o, tm)?;
    Ok((h, m))
}

/// Sentinel gate and vector for the memory `m_t` of the same step.
/// Returns `(s_t, g_t)`.
pub fn sentinel_step(
    g: &mut Graph,
    p: &LstmParams<Value>,
    x: Value,
    h_prev: Value,
    m: Value,
) -> Result<(Value, Value)> {
    let hidden = g.shape(p.sentinel_h).dims()[0];
    let d_input = g.shape(p.sentinel_x).dims()[1];
    check_vec(g, x, d_input, "sentinel_step input")?;
    check_vec(g, h_prev, hidden, "sentinel_step hidden")?;
    check_vec(g, m, hidden, "sentinel_step memory")?;

    let pre = affine2(g, p.sentinel_x, x, p.sentinel_h, h_prev, None)?;
    let gate = g.sigmoid(pre);
    let tm = g.tanh(m);
    let s = g.mul(gate, tm)?;
    Ok((s, gate))
}

/// Full decoder step: LSTM update, then the sentinel when requested.
pub fn decoder_step(
    g: &mut Graph,
    p: &LstmParams<Value>,
    x: Value,
    h_prev: Value,
    m_prev: Value,
    with_sentinel: bool,
) -> Result<DecoderStep> {
    let (h, m) = lstm_step(g, p, x, h_prev, m_prev)?;
    let (s, gate) = if with_sentinel {
        let (s, gate) = sentinel_step(g, p, x, h_prev, m)?;
        (Some(s), Some(gate))
    } else {
        (None, None)
    };
    Ok(DecoderStep { x, h, m, s, gate })
}
