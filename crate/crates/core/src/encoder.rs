//! Frozen synthetic feature extractor plus the learnable feature projections.
//!
//! Each grid cell yields a raw vector made of a category one-hot (with a slot
//! for "empty"), a color one-hot and a sinusoidal encoding of the cell
//! position. Gaussian jitter keyed by the scene id and the cell content is
//! added on top, so the jitter travels with an object if it moves.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::{Inventory, SceneInstance};
use crate::error::{Error, Result};
use crate::params::{param_group, uniform};
use crate::tensor::{Graph, Shape, Tensor, Value};

const POSITION_FREQUENCIES: usize = 3;

/// Offsets of the blocks inside a raw feature vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RawLayout {
    pub categories: usize,
    pub colors: usize,
}

impl RawLayout {
    pub fn new(inventory: &Inventory) -> Self {
        RawLayout {
            categories: inventory.categories.len(),
            colors: inventory.colors.len(),
        }
    }

    /// Index of the "empty cell" slot in the category block.
    pub fn empty_slot(&self) -> usize {
        self.categories
    }

    pub fn color_offset(&self) -> usize {
        self.categories + 1
    }

    pub fn position_offset(&self) -> usize {
        self.color_offset() + self.colors
    }

    pub fn d_raw(&self) -> usize {
        self.position_offset() + 4 * POSITION_FREQUENCIES
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderConfig {
    pub jitter_sigma: f64,
    pub jitter_seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            jitter_sigma: 0.05,
            jitter_seed: 0,
        }
    }
}

/// Noise-free embedding of a cell's content at `(row, col)`.
pub fn prototype(layout: &RawLayout, content: Option<(usize, usize)>, row: usize, col: usize, grid: usize) -> Vec<f64> {
    let mut a = vec![0.0; layout.d_raw()];
    match content {
        Some((category, color)) => {
            a[category] = 1.0;
            a[layout.color_offset() + color] = 1.0;
        }
        None => a[layout.empty_slot()] = 1.0,
    }
    let mut p = layout.position_offset();
    for coord in [row, col] {
        let phase = std::f64::consts::PI * (coord as f64 + 0.5) / grid as f64;
        for f in 0..POSITION_FREQUENCIES {
            let w = phase * (1 << f) as f64;
            a[p] = w.sin();
            a[p + 1] = w.cos();
            p += 2;
        }
    }
    a
}

fn content_key(layout: &RawLayout, content: Option<(usize, usize)>) -> u128 {
    match content {
        Some((category, color)) => (1 + category * layout.colors + color) as u128,
        None => 0,
    }
}

/// Raw features `A` as a `d_raw × k` matrix; column `r * grid + c` is cell `(r, c)`.
pub fn encode_scene(scene: &SceneInstance, inventory: &Inventory, cfg: &EncoderConfig) -> Tensor {
    let layout = RawLayout::new(inventory);
    let d_raw = layout.d_raw();
    let k = scene.regions();
    let mut a = Tensor::zeros(&[d_raw, k]);
    for (idx, content) in scene.cells().into_iter().enumerate() {
        let mut col = prototype(&layout, content, idx / scene.grid, idx % scene.grid, scene.grid);
        if cfg.jitter_sigma != 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.jitter_seed);
            rng.set_stream(scene.id);
            rng.set_word_pos(content_key(&layout, content) << 32);
            for x in col.iter_mut() {
                let n: f64 = rng.sample(StandardNormal);
                *x += cfg.jitter_sigma * n;
            }
        }
        let data = a.data_mut();
        for (r, x) in col.into_iter().enumerate() {
            data[r * k + idx] = x;
        }
    }
    a
}

/// Content recovered from a raw feature column by nearest prototype.
pub fn nearest_content(layout: &RawLayout, column: &[f64], row: usize, col: usize, grid: usize) -> Option<(usize, usize)> {
    let candidates = std::iter::once(None).chain(
        (0..layout.categories).flat_map(|c| (0..layout.colors).map(move |k| Some((c, k)))),
    );
    let dist = |content| {
        prototype(layout, content, row, col, grid)
            .iter()
            .zip(column)
            .map(|(p, x)| (p - x) * (p - x))
            .sum::<f64>()
    };
    candidates
        .map(|c| (dist(c), c))
        .fold((f64::INFINITY, None), |best, cur| if cur.0 < best.0 { cur } else { best })
        .1
}

param_group! {
    /// `w_a` projects region features, `w_b` the pooled global feature;
    /// both are `d × d_raw`.
    pub struct EncoderParams {
        w_a, w_b,
    }
}

impl EncoderParams {
    pub fn init(rng: &mut impl Rng, d_raw: usize, d: usize) -> Self {
        let bound = 1.0 / (d_raw as f64).sqrt();
        EncoderParams {
            w_a: uniform(rng, &[d, d_raw], bound),
            w_b: uniform(rng, &[d, d_raw], bound),
        }
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> EncoderParams<Value> {
        self.map(&mut |_, t| g.leaf(t.clone(), trainable))
    }
}

/// Raw and projected features of one scene.
#[derive(Clone, Debug)]
pub struct FeatureGrid {
    pub a: Tensor,
    pub a_g: Tensor,
    /// `relu(W_a A)`, `d × k`.
    pub v: Value,
    /// `relu(W_b a_g)`, length `d`.
    pub v_g: Value,
}

/// Column mean of a `d_raw × k` matrix.
pub fn mean_pool(a: &Tensor) -> Result<Tensor> {
    let &[d_raw, k] = a.dims() else {
        return Err(Error::Dimension {
            op: "mean_pool",
            left: a.shape().clone(),
            right: Shape::new([0, 0]),
        });
    };
    if k == 0 {
        return Err(Error::contract("pooling over zero regions"));
    }
    let data = a.data();
    let mean = (0..d_raw)
        .map(|r| data[r * k..(r + 1) * k].iter().sum::<f64>() / k as f64)
        .collect();
    Ok(Tensor::vector(mean))
}

pub fn pool_and_project(g: &mut Graph, p: &EncoderParams<Value>, a: &Tensor) -> Result<FeatureGrid> {
    let a_g = mean_pool(a)?;
    let wa = g.shape(p.w_a).dims().to_vec();
    if wa.len() != 2 || wa[1] != a.dims()[0] {
        return Err(Error::Dimension {
            op: "pool_and_project",
            left: Shape::new(wa),
            right: a.shape().clone(),
        });
    }
    let a_node = g.constant(a.clone());
    let ag_node = g.constant(a_g.clone());
    let wa_a = g.matmul(p.w_a, a_node)?;
    let v = g.relu(wa_a);
    let wb_ag = g.matmul(p.w_b, ag_node)?;
    let v_g = g.relu(wb_ag);
    Ok(FeatureGrid {
        a: a.clone(),
        a_g,
        v,
        v_g,
    })
}
