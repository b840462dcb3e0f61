use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::optim::{Adam, AdamConfig};
use super::{decode_beam, ModelParams};
use crate::dataset::{truncate, Inventory, SceneInstance, Vocabulary, END};
use crate::encoder::{encode_scene, EncoderConfig};
use crate::error::{Error, Result};
use crate::metrics::bleu;
use crate::tensor::{Graph, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many epochs without a validation improvement.
    pub patience: usize,
    /// Seeds the example order.
    pub seed: u64,
    pub val_beam: usize,
    /// Content tokens kept per caption.
    pub max_caption_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: AdamConfig {
                learning_rate: 2e-3,
                beta1: 0.8,
                beta2: 0.999,
                epsilon: 1e-8,
            },
            batch_size: 16,
            max_epochs: 30,
            patience: 6,
            seed: 0,
            val_beam: 3,
            max_caption_len: 12,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.val_beam == 0 {
            return Err(Error::Config("validation beam must be at least 1".into()));
        }
        if !(self.optimizer.learning_rate >= 0.0 && self.optimizer.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be finite and non-negative",
                self.optimizer.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-token loss over the epoch's examples.
    pub loss: f64,
    pub bleu4: f64,
    /// Mean sentinel gate over all training steps of the epoch.
    pub mean_beta: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation BLEU-4.
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Loss statistics of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchStats {
    pub loss: f64,
    pub beta_sum: f64,
    pub steps: usize,
}

/// Optimizer state bound to one set of parameters.
pub struct Trainer {
    pub params: ModelParams,
    adam: Adam,
    epoch: usize,
}

impl Trainer {
    pub fn new(params: ModelParams, optimizer: AdamConfig) -> Result<Self> {
        let adam = {
            let named = params.named();
            let shapes: Vec<&Tensor> = named.iter().map(|(_, t)| *t).collect();
            Adam::new(optimizer, &shapes)?
        };
        Ok(Trainer {
            params,
            adam,
            epoch: 0,
        })
    }

    /// One update on the mean loss of `batch`.
    pub fn step(&mut self, batch: &[(&Tensor, &[usize])]) -> Result<BatchStats> {
        if batch.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, true);
        let mut total = None;
        let mut beta_sum = 0.0;
        let mut steps = 0;
        for (raw, ids) in batch {
            let scene = bound.scene(&mut g, raw)?;
            let out = bound.caption_loss(&mut g, &scene, ids)?;
            beta_sum += out.steps.iter().map(|s| g.item(s.attention.beta)).sum::<f64>();
            steps += out.steps.len();
            total = Some(match total {
                Some(t) => g.add(t, out.loss)?,
                None => out.loss,
            });
        }
        let loss = g.scale(total.expect("non-empty batch"), 1.0 / batch.len() as f64);
        g.backward(loss)?;
        let value = g.item(loss);
        let handles = bound.values();
        if !value.is_finite() {
            let (param, magnitude) = self
                .params
                .named()
                .into_iter()
                .zip(&handles)
                .map(|((name, _), &h)| {
                    let m = g.grad_slice(h).map_or(0.0, |s| {
                        s.iter().fold(0.0f64, |a, x| if x.is_nan() { f64::INFINITY } else { a.max(x.abs()) })
                    });
                    (name, m)
                })
                .fold((String::new(), -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            return Err(Error::Diverged {
                epoch: self.epoch,
                loss: value,
                param,
                magnitude,
            });
        }
        let grads: Vec<Option<&[f64]>> = handles.iter().map(|&h| g.grad_slice(h)).collect();
        let mut named = self.params.named_mut();
        let mut tensors: Vec<&mut Tensor> = named.iter_mut().map(|(_, t)| &mut **t).collect();
        self.adam.update(&mut tensors, &grads);
        Ok(BatchStats {
            loss: value,
            beta_sum,
            steps,
        })
    }
}

/// Corpus BLEU-4 of beam-decoded captions against truncated references.
pub fn evaluate_bleu(
    params: &ModelParams,
    scenes: &[SceneInstance],
    features: &[Tensor],
    vocab: &Vocabulary,
    beam: usize,
    max_caption_len: usize,
) -> Result<f64> {
    let mut candidates = Vec::with_capacity(scenes.len());
    for raw in features {
        let best = decode_beam(params, raw, beam, max_caption_len + 1)?
            .into_iter()
            .next()
            .expect("beam search returns at least one hypothesis");
        candidates.push(
            best.content(END)
                .iter()
                .map(|&t| vocab.token(t).to_string())
                .collect::<Vec<_>>(),
        );
    }
    let references: Vec<Vec<Vec<String>>> = scenes
        .iter()
        .map(|s| {
            s.references
                .iter()
                .map(|r| truncate(r, max_caption_len).to_vec())
                .collect()
        })
        .collect();
    Ok(bleu(&candidates, &references, 4)?.bleu(4))
}

/// Mini-batch training with per-epoch validation and early stopping.
#[allow(clippy::too_many_arguments)]
pub fn train(
    init: ModelParams,
    train_scenes: &[SceneInstance],
    val_scenes: &[SceneInstance],
    vocab: &Vocabulary,
    inventory: &Inventory,
    encoder: &EncoderConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_scenes.is_empty() {
        return Err(Error::contract("no training scenes"));
    }
    if val_scenes.is_empty() {
        return Err(Error::contract("no validation scenes"));
    }
    if init.config.vocab != vocab.len() {
        return Err(Error::contract(format!(
            "model vocabulary {} differs from vocabulary file {}",
            init.config.vocab,
            vocab.len()
        )));
    }
    let train_feats: Vec<Tensor> = train_scenes.iter().map(|s| encode_scene(s, inventory, encoder)).collect();
    let val_feats: Vec<Tensor> = val_scenes.iter().map(|s| encode_scene(s, inventory, encoder)).collect();
    let captions: Vec<(usize, Vec<usize>)> = train_scenes
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.references.iter().map(move |r| (i, r)))
        .map(|(i, r)| (i, vocab.encode(r, cfg.max_caption_len)))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..captions.len()).collect();
    let mut trainer = Trainer::new(init.clone(), cfg.optimizer)?;
    let mut best = (f64::NEG_INFINITY, 0, init);
    let mut since_best = 0;
    let mut log = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        trainer.epoch = epoch;
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut beta_sum = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&Tensor, &[usize])> = chunk
                .iter()
                .map(|&c| (&train_feats[captions[c].0], captions[c].1.as_slice()))
                .collect();
            let stats = trainer.step(&batch)?;
            loss_sum += stats.loss * chunk.len() as f64;
            beta_sum += stats.beta_sum;
            steps += stats.steps;
        }
        let bleu4 = evaluate_bleu(&trainer.params, val_scenes, &val_feats, vocab, cfg.val_beam, cfg.max_caption_len)?;
        let row = EpochLog {
            epoch,
            loss: loss_sum / captions.len() as f64,
            bleu4,
            mean_beta: beta_sum / steps as f64,
        };
        on_epoch(&row);
        log.push(row);
        if bleu4 > best.0 {
            best = (bleu4, epoch, trainer.params.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = epoch < cfg.max_epochs;
                break;
            }
        }
    }
    Ok(TrainOutcome {
        params: best.2,
        log,
        best_epoch: best.1,
        stopped_early,
    })
}

pub const TRAIN_LOG_FORMAT: &str = "# sentinel-trainlog v1";

pub fn format_log(rows: &[EpochLog]) -> String {
    let mut out = format!("{TRAIN_LOG_FORMAT}\nepoch,loss,bleu4,mean_beta\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.epoch, r.loss, r.bleu4, r.mean_beta));
    }
    out
}
