//! The full captioning model: parameters, teacher-forced loss, decoding,
//! training and checkpoints.

mod beam;
mod checkpoint;
mod optim;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{adaptive_attention, spatial_trace, word_distribution, AttentionContext, AttentionParams, AttentionTrace};
use crate::dataset::{END, PAD, START};
use crate::encoder::{pool_and_project, EncoderParams};
use crate::error::{Error, Result};
use crate::params::uniform;
use crate::recurrent::{decoder_step, LstmParams};
use crate::tensor::gradcheck::{central_difference, compare, FdReport};
use crate::tensor::{Graph, Tensor, Value};

pub use beam::{beam_search, greedy_search, BeamConfig, Hypothesis, SequenceScorer};
pub use checkpoint::{parse_checkpoint, read_checkpoint, Checkpoint, CHECKPOINT_FORMAT};
pub use optim::{Adam, AdamConfig};
pub use train::{evaluate_bleu, format_log, train, BatchStats, EpochLog, TrainConfig, TrainOutcome, Trainer, TRAIN_LOG_FORMAT};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Spatial attention only; the sentinel branch is disabled.
    Spatial,
    /// Spatial attention mixed with the visual sentinel.
    Adaptive,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Spatial => "spatial",
            Variant::Adaptive => "adaptive",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spatial" => Ok(Variant::Spatial),
            "adaptive" => Ok(Variant::Adaptive),
            other => Err(Error::Config(format!("unknown model variant {other:?}"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub vocab: usize,
    /// Regions per scene.
    pub k: usize,
    pub d_raw: usize,
    /// Attention feature dimension.
    pub d: usize,
    pub d_embed: usize,
    pub hidden: usize,
}

impl ModelConfig {
    pub fn new(variant: Variant, vocab: usize, k: usize, d_raw: usize) -> Self {
        ModelConfig {
            variant,
            vocab,
            k,
            d_raw,
            d: 64,
            d_embed: 32,
            hidden: 64,
        }
    }

    pub fn d_input(&self) -> usize {
        self.d_embed + self.d
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.vocab, self.k, self.d_raw, self.d, self.d_embed, self.hidden];
        if dims.contains(&0) {
            return Err(Error::Config(format!("model dimensions must be positive: {self:?}")));
        }
        if self.vocab <= END {
            return Err(Error::Config("vocabulary must include the reserved tokens".into()));
        }
        Ok(())
    }
}

/// Every learnable tensor of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub embedding: Tensor,
    pub encoder: EncoderParams,
    pub lstm: LstmParams,
    pub attention: AttentionParams,
}

/// Graph handles for one binding of [`ModelParams`].
#[derive(Clone, Debug)]
pub struct BoundModel {
    pub config: ModelConfig,
    pub embedding: Value,
    pub encoder: EncoderParams<Value>,
    pub lstm: LstmParams<Value>,
    pub attention: AttentionParams<Value>,
}

fn qualified<T>(prefix: &'static str, fields: Vec<(&'static str, T)>) -> impl Iterator<Item = (String, T)> {
    fields.into_iter().map(move |(n, t)| (format!("{prefix}.{n}"), t))
}

impl ModelParams {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embedding = uniform(&mut rng, &[config.vocab, config.d_embed], 1.0 / (config.d_embed as f64).sqrt());
        let encoder = EncoderParams::init(&mut rng, config.d_raw, config.d);
        let lstm = LstmParams::init(&mut rng, config.d_input(), config.hidden);
        let attention = AttentionParams::init(&mut rng, config.k, config.d, config.hidden, config.vocab);
        Ok(ModelParams {
            config,
            embedding,
            encoder,
            lstm,
            attention,
        })
    }

    /// Registered parameters in a fixed order with qualified names.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        std::iter::once(("embedding".to_string(), &self.embedding))
            .chain(qualified("encoder", self.encoder.fields()))
            .chain(qualified("lstm", self.lstm.fields()))
            .chain(qualified("attention", self.attention.fields()))
            .collect()
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        std::iter::once(("embedding".to_string(), &mut self.embedding))
            .chain(qualified("encoder", self.encoder.fields_mut()))
            .chain(qualified("lstm", self.lstm.fields_mut()))
            .chain(qualified("attention", self.attention.fields_mut()))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Expected shape of every parameter for `config`, in registration order.
    pub fn expected_shapes(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
        let &ModelConfig { vocab, k, d_raw, d, d_embed, hidden, .. } = config;
        let lstm = LstmParams::<()>::NAMES.iter().map(|n| {
            let dims = match &n[n.len() - 2..] {
                "_x" => vec![hidden, d_embed + d],
                "_h" => vec![hidden, hidden],
                _ => vec![hidden],
            };
            (format!("lstm.{n}"), dims)
        });
        let attention = AttentionParams::<()>::NAMES.iter().map(|&n| {
            let dims = match n {
                "w_h" => vec![k],
                "w_p" => vec![vocab, d],
                "proj_h" | "proj_s" => vec![d, hidden],
                _ => vec![k, d],
            };
            (format!("attention.{n}"), dims)
        });
        std::iter::once(("embedding".to_string(), vec![vocab, d_embed]))
            .chain(EncoderParams::<()>::NAMES.iter().map(|n| (format!("encoder.{n}"), vec![d, d_raw])))
            .chain(lstm)
            .chain(attention)
            .collect()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundModel {
        BoundModel {
            config: self.config,
            embedding: g.leaf(self.embedding.clone(), trainable),
            encoder: self.encoder.bind(g, trainable),
            lstm: self.lstm.bind(g, trainable),
            attention: self.attention.bind(g, trainable),
        }
    }
}

impl BoundModel {
    /// Handles in the same order as [`ModelParams::named`].
    pub fn values(&self) -> Vec<Value> {
        std::iter::once(self.embedding)
            .chain(self.encoder.fields().into_iter().map(|(_, v)| *v))
            .chain(self.lstm.fields().into_iter().map(|(_, v)| *v))
            .chain(self.attention.fields().into_iter().map(|(_, v)| *v))
            .collect()
    }
}

/// Per-scene graph state shared by all decoding steps.
#[derive(Clone, Debug)]
pub struct SceneContext {
    pub attention: AttentionContext,
    pub v_g: Value,
}

/// Recurrent state carried between steps.
#[derive(Clone, Copy, Debug)]
pub struct RecurrentState {
    pub h: Value,
    pub m: Value,
}

/// Everything one decoder step produced.
#[derive(Clone, Copy, Debug)]
pub struct StepOutput {
    pub state: RecurrentState,
    pub attention: AttentionTrace,
    /// Word distribution.
    pub p: Value,
}

impl BoundModel {
    pub fn scene(&self, g: &mut Graph, raw: &Tensor) -> Result<SceneContext> {
        if raw.dims() != [self.config.d_raw, self.config.k] {
            return Err(Error::Dimension {
                op: "scene features",
                left: raw.shape().clone(),
                right: crate::tensor::Shape::new([self.config.d_raw, self.config.k]),
            });
        }
        let fg = pool_and_project(g, &self.encoder, raw)?;
        let attention = AttentionContext::new(g, &self.attention, fg.v)?;
        Ok(SceneContext { attention, v_g: fg.v_g })
    }

    pub fn initial_state(&self, g: &mut Graph) -> RecurrentState {
        let h = g.constant(Tensor::zeros(&[self.config.hidden]));
        let m = g.constant(Tensor::zeros(&[self.config.hidden]));
        RecurrentState { h, m }
    }

    /// One step with input token `prev`: `x = [embedding(prev); v_g]`.
    pub fn step(&self, g: &mut Graph, scene: &SceneContext, state: RecurrentState, prev: usize) -> Result<StepOutput> {
        if prev >= self.config.vocab {
            return Err(Error::contract(format!("token id {prev} outside vocabulary of {}", self.config.vocab)));
        }
        let w = g.row(self.embedding, prev)?;
        let x = g.concat(w, scene.v_g)?;
        let adaptive = self.config.variant == Variant::Adaptive;
        let step = decoder_step(g, &self.lstm, x, state.h, state.m, adaptive)?;
        let h_proj = g.matmul(self.attention.proj_h, step.h)?;
        let h_tilde = g.tanh(h_proj);
        let attention = match step.s {
            Some(s) => {
                let s_proj = g.matmul(self.attention.proj_s, s)?;
                let s_tilde = g.tanh(s_proj);
                adaptive_attention(g, &self.attention, &scene.attention, h_tilde, s_tilde)?
            }
            None => spatial_trace(g, &self.attention, &scene.attention, h_tilde)?,
        };
        let p = word_distribution(g, &self.attention, attention.c_hat, h_tilde)?;
        Ok(StepOutput {
            state: RecurrentState { h: step.h, m: step.m },
            attention,
            p,
        })
    }

    /// Teacher-forced loss for `<start> y_1 .. <end>`: mean over predicted
    /// tokens of `-log p_t[y_{t+1}]`.
    pub fn caption_loss(&self, g: &mut Graph, scene: &SceneContext, ids: &[usize]) -> Result<CaptionLoss> {
        if ids.len() < 2 {
            return Err(Error::contract("caption needs <start> and at least one target token"));
        }
        if ids[0] != START {
            return Err(Error::contract("caption must begin with <start>"));
        }
        let mut state = self.initial_state(g);
        let mut steps = Vec::with_capacity(ids.len() - 1);
        let mut total: Option<Value> = None;
        for pair in ids.windows(2) {
            let out = self.step(g, scene, state, pair[0])?;
            if pair[1] >= self.config.vocab || pair[1] == PAD || pair[1] == START {
                return Err(Error::contract(format!("invalid target token {}", pair[1])));
            }
            let prob = g.element(out.p, pair[1])?;
            let lp = g.log(prob);
            total = Some(match total {
                Some(t) => g.add(t, lp)?,
                None => lp,
            });
            state = out.state;
            steps.push(out);
        }
        let n = steps.len() as f64;
        let loss = g.scale(total.expect("at least one step"), -1.0 / n);
        Ok(CaptionLoss {
            loss,
            steps,
            targets: ids[1..].to_vec(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct CaptionLoss {
    pub loss: Value,
    pub steps: Vec<StepOutput>,
    pub targets: Vec<usize>,
}

/// Plain-data view of one decoding step, detached from its graph.
#[derive(Clone, Debug, PartialEq)]
pub struct StepAttention {
    pub alpha: Vec<f64>,
    pub alpha_hat: Vec<f64>,
    pub beta: f64,
}

impl StepAttention {
    pub fn read(g: &Graph, t: &AttentionTrace) -> Self {
        StepAttention {
            alpha: g.data(t.alpha).to_vec(),
            alpha_hat: g.data(t.alpha_hat).to_vec(),
            beta: g.item(t.beta),
        }
    }
}

/// Loss value and per-step traces of one caption, evaluated without gradients.
pub fn step_loss(model: &ModelParams, raw: &Tensor, ids: &[usize]) -> Result<(f64, Vec<(StepAttention, Vec<f64>)>)> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g, false);
    let scene = bound.scene(&mut g, raw)?;
    let out = bound.caption_loss(&mut g, &scene, ids)?;
    let traces = out
        .steps
        .iter()
        .map(|s| (StepAttention::read(&g, &s.attention), g.data(s.p).to_vec()))
        .collect();
    Ok((g.item(out.loss), traces))
}

/// Loss of one caption and its gradient for every parameter, in
/// [`ModelParams::named`] order.
pub fn loss_and_gradients(model: &ModelParams, raw: &Tensor, ids: &[usize]) -> Result<(f64, Vec<(String, Vec<f64>)>)> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g, true);
    let scene = bound.scene(&mut g, raw)?;
    let out = bound.caption_loss(&mut g, &scene, ids)?;
    g.backward(out.loss)?;
    let grads = model
        .named()
        .into_iter()
        .zip(bound.values())
        .map(|((name, t), v)| (name, g.grad_slice(v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec)))
        .collect();
    Ok((g.item(out.loss), grads))
}

/// Central-difference check of every parameter gradient of one caption loss.
pub fn gradient_check(model: &ModelParams, raw: &Tensor, ids: &[usize], eps: f64) -> Result<Vec<(String, FdReport)>> {
    let (_, grads) = loss_and_gradients(model, raw, ids)?;
    let mut probe = model.clone();
    let mut reports = Vec::with_capacity(grads.len());
    for (index, (name, analytic)) in grads.into_iter().enumerate() {
        let point = model.named()[index].1.data().to_vec();
        let mut failure = None;
        let numeric = central_difference(
            |x| {
                probe.named_mut()[index].1.data_mut().copy_from_slice(x);
                match step_loss(&probe, raw, ids) {
                    Ok((loss, _)) => loss,
                    Err(e) => {
                        failure.get_or_insert(e);
                        f64::NAN
                    }
                }
            },
            &point,
            eps,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        probe.named_mut()[index].1.data_mut().copy_from_slice(&point);
        reports.push((name, compare(&analytic, &numeric)));
    }
    Ok(reports)
}

/// Decoder driven one token at a time on a private graph.
pub struct ModelScorer {
    graph: Graph,
    model: BoundModel,
    scene: SceneContext,
}

impl ModelScorer {
    pub fn new(params: &ModelParams, raw: &Tensor) -> Result<Self> {
        let mut graph = Graph::new();
        let model = params.bind(&mut graph, false);
        let scene = model.scene(&mut graph, raw)?;
        Ok(ModelScorer { graph, model, scene })
    }
}

impl SequenceScorer for ModelScorer {
    type State = RecurrentState;
    type Attention = StepAttention;

    fn initial(&mut self) -> Result<RecurrentState> {
        Ok(self.model.initial_state(&mut self.graph))
    }

    fn advance(&mut self, state: &RecurrentState, prev: usize) -> Result<(RecurrentState, Vec<f64>, StepAttention)> {
        let out = self.model.step(&mut self.graph, &self.scene, *state, prev)?;
        let log_probs = self.graph.data(out.p).iter().map(|p| p.ln()).collect();
        Ok((out.state, log_probs, StepAttention::read(&self.graph, &out.attention)))
    }
}

/// Beam settings for model decoding: `<start>` and `<pad>` are never emitted.
pub fn decode_config(beam: usize, max_len: usize) -> BeamConfig {
    BeamConfig {
        beam,
        max_len,
        start: START,
        end: Some(END),
        banned: vec![PAD, START],
    }
}

pub fn decode_beam(params: &ModelParams, raw: &Tensor, beam: usize, max_len: usize) -> Result<Vec<Hypothesis<StepAttention>>> {
    let mut scorer = ModelScorer::new(params, raw)?;
    beam_search(&mut scorer, &decode_config(beam, max_len))
}

pub fn decode_greedy(params: &ModelParams, raw: &Tensor, max_len: usize) -> Result<Hypothesis<StepAttention>> {
    let mut scorer = ModelScorer::new(params, raw)?;
    greedy_search(&mut scorer, &decode_config(1, max_len))
}
