//! When the decoder looks at the image and where it looks: grounding
//! probabilities, attention maps, weakly supervised boxes and entropy.

mod traces;

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::io::Write;

use serde::Serialize;

use crate::dataset::{Inventory, SceneInstance, FUNCTION_TOKENS};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

pub use traces::{parse_trace_line, parse_traces, read_traces, write_traces, TraceHeader, TraceRecord, TraceSet, TRACE_FORMAT};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroundingRow {
    pub token: String,
    pub count: usize,
    /// Mean of `1 - β` over the token's emissions.
    pub probability: f64,
}

/// Per-token mean visual grounding probability, highest first (ties by token).
pub fn grounding_table(records: &[TraceRecord]) -> Result<Vec<GroundingRow>> {
    if records.is_empty() {
        return Err(Error::contract("grounding table over no traces"));
    }
    let mut acc: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for r in records {
        let e = acc.entry(r.token.as_str()).or_default();
        e.0 += 1;
        e.1 += 1.0 - r.beta;
    }
    let mut rows: Vec<GroundingRow> = acc
        .into_iter()
        .map(|(t, (n, s))| GroundingRow {
            token: t.to_string(),
            count: n,
            probability: s / n as f64,
        })
        .collect();
    rows.sort_by(|a, b| b.probability.total_cmp(&a.probability).then_with(|| a.token.cmp(&b.token)));
    Ok(rows)
}

/// Mean grounding of visual words minus mean grounding of function words,
/// each a plain mean over the per-token rows present in the table.
pub fn grounding_separation(table: &[GroundingRow], inventory: &Inventory) -> Option<f64> {
    let mean = |pick: &dyn Fn(&str) -> bool| {
        let xs: Vec<f64> = table.iter().filter(|r| pick(&r.token)).map(|r| r.probability).collect();
        (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
    };
    let visual = mean(&|t| inventory.is_visual_word(t))?;
    let function = mean(&|t| FUNCTION_TOKENS.contains(&t))?;
    Some(visual - function)
}

/// First `k` entries of `alpha_hat` rescaled to sum to one.
pub fn spatial_map(alpha_hat: &[f64], k: usize) -> Vec<f64> {
    let raw = &alpha_hat[..k];
    let total: f64 = raw.iter().sum();
    if total > 0.0 {
        raw.iter().map(|a| a / total).collect()
    } else {
        raw.to_vec()
    }
}

/// Bilinear resampling of a `grid × grid` map onto `size × size` pixels.
/// Grid values sit at the centers of their cells; pixels beyond the outer
/// centers take the edge value.
pub fn upsample_bilinear(raw: &[f64], grid: usize, size: usize) -> Result<Vec<f64>> {
    if grid == 0 || raw.len() != grid * grid {
        return Err(Error::contract(format!("{} values do not form a {grid}×{grid} map", raw.len())));
    }
    if size < grid {
        return Err(Error::contract(format!("target size {size} is below grid {grid}")));
    }
    let coord = |p: usize| -> (usize, usize, f64) {
        if grid == 1 {
            return (0, 0, 0.0);
        }
        let u = ((p as f64 + 0.5) * grid as f64 / size as f64 - 0.5).clamp(0.0, (grid - 1) as f64);
        let i0 = (u.floor() as usize).min(grid - 2);
        (i0, i0 + 1, u - i0 as f64)
    };
    let cols: Vec<_> = (0..size).map(coord).collect();
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        let (r0, r1, ty) = cols[y];
        for &(c0, c1, tx) in &cols {
            let top = lerp(raw[r0 * grid + c0], raw[r0 * grid + c1], tx);
            let bottom = lerp(raw[r1 * grid + c0], raw[r1 * grid + c1], tx);
            out.push(lerp(top, bottom, ty));
        }
    }
    Ok(out)
}

/// Tight box around the largest 4-connected region whose max-normalized
/// value exceeds `threshold`. Ties go to the region met first in raster
/// order. `None` when the map has no positive value.
pub fn localize(map: &[f64], size: usize, threshold: f64) -> Option<BBox> {
    assert_eq!(map.len(), size * size, "map must be size × size");
    let max = map.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) || !max.is_finite() {
        return None;
    }
    let mask: Vec<bool> = map.iter().map(|v| v / max > threshold).collect();
    let mut seen = vec![false; mask.len()];
    let mut best: Option<(usize, BBox)> = None;
    let mut queue = VecDeque::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        let mut n = 0;
        while let Some(p) = queue.pop_front() {
            n += 1;
            let (x, y) = (p % size, p / size);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x + 1);
            y1 = y1.max(y + 1);
            let mut visit = |q: usize| {
                if mask[q] && !seen[q] {
                    seen[q] = true;
                    queue.push_back(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < size {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - size);
            }
            if y + 1 < size {
                visit(p + size);
            }
        }
        if best.as_ref().map_or(true, |(m, _)| n > *m) {
            best = Some((n, BBox { x0, y0, x1, y1 }));
        }
    }
    best.map(|(_, b)| b)
}

/// Candidate thresholds `0.1, 0.2, …, 0.9`.
pub fn threshold_grid() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const MIN_THRESHOLD_SAMPLES: usize = 5;

/// One generated caption's evidence for one category present in its scene.
#[derive(Clone, Debug)]
pub struct Alignment {
    pub scene: u64,
    pub category: usize,
    /// Upsampled attention map of every step whose token names the category.
    pub maps: Vec<Vec<f64>>,
    pub truth: Vec<BBox>,
}

impl Alignment {
    /// Best IOU over the aligned words and the category's ground-truth boxes.
    pub fn score(&self, size: usize, threshold: f64) -> f64 {
        self.maps
            .iter()
            .filter_map(|m| localize(m, size, threshold))
            .flat_map(|b| self.truth.iter().map(move |t| iou(&b, t)))
            .fold(0.0, f64::max)
    }

    /// IOU obtained from uniform attention, whose box is the whole canvas.
    pub fn uniform_score(&self, size: usize) -> f64 {
        let canvas = (size * size) as f64;
        self.truth
            .iter()
            .map(|t| t.area() as f64 / canvas)
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, Default)]
pub struct AlignmentSet {
    pub items: Vec<Alignment>,
    /// Category words whose category is absent from the scene.
    pub unaligned: usize,
    pub size: usize,
}

/// Match generated category words (synonyms included) to ground truth.
pub fn align(traces: &TraceSet, scenes: &[SceneInstance], inventory: &Inventory) -> Result<AlignmentSet> {
    let by_id: HashMap<u64, &SceneInstance> = scenes.iter().map(|s| (s.id, s)).collect();
    let k = traces.regions();
    let grid = traces.header.grid;
    let size = traces.header.canvas;
    let mut set = AlignmentSet {
        size,
        ..AlignmentSet::default()
    };
    for (scene_id, steps) in traces.captions() {
        let scene = by_id
            .get(&scene_id)
            .ok_or_else(|| Error::format(format!("traces mention scene {scene_id}, absent from the corpus")))?;
        if scene.grid != grid || scene.canvas != size {
            return Err(Error::format(format!("scene {scene_id} geometry differs from the traces")));
        }
        let mut per_category: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
        for r in steps {
            let Some(category) = inventory.category_of(&r.token) else {
                continue;
            };
            if scene.boxes_of(category).next().is_none() {
                set.unaligned += 1;
                continue;
            }
            let map = upsample_bilinear(&spatial_map(&r.alpha_hat, k), grid, size)?;
            per_category.entry(category).or_default().push(map);
        }
        for (category, maps) in per_category {
            set.items.push(Alignment {
                scene: scene_id,
                category,
                maps,
                truth: scene.boxes_of(category).copied().collect(),
            });
        }
    }
    Ok(set)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CategoryScore {
    pub category: String,
    pub count: usize,
    pub mean_iou: f64,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalizationReport {
    pub per_category: Vec<CategoryScore>,
    /// Mean over categories with at least one aligned caption.
    pub mean_iou: f64,
    pub aligned: usize,
    pub unaligned: usize,
}

/// Grid search over [`threshold_grid`] for the best mean IOU of `category`.
/// Falls back to [`DEFAULT_THRESHOLD`] with fewer than
/// [`MIN_THRESHOLD_SAMPLES`] aligned captions; ties keep the smaller value.
pub fn estimate_threshold(set: &AlignmentSet, category: usize) -> f64 {
    let items: Vec<&Alignment> = set.items.iter().filter(|a| a.category == category).collect();
    if items.len() < MIN_THRESHOLD_SAMPLES {
        return DEFAULT_THRESHOLD;
    }
    let mut best = (f64::NEG_INFINITY, DEFAULT_THRESHOLD);
    for th in threshold_grid() {
        let mean = items.iter().map(|a| a.score(set.size, th)).sum::<f64>() / items.len() as f64;
        if mean > best.0 {
            best = (mean, th);
        }
    }
    best.1
}

pub fn estimate_thresholds(set: &AlignmentSet, inventory: &Inventory) -> Vec<f64> {
    (0..inventory.categories.len())
        .map(|c| estimate_threshold(set, c))
        .collect()
}

/// Per-category mean IOU, with `score` mapping an alignment and its
/// category threshold to an IOU.
fn report_with(
    set: &AlignmentSet,
    inventory: &Inventory,
    thresholds: &[f64],
    score: impl Fn(&Alignment, f64) -> f64,
) -> LocalizationReport {
    let mut per_category = Vec::new();
    for (c, name) in inventory.categories.iter().enumerate() {
        let th = thresholds.get(c).copied().unwrap_or(DEFAULT_THRESHOLD);
        let scores: Vec<f64> = set
            .items
            .iter()
            .filter(|a| a.category == c)
            .map(|a| score(a, th))
            .collect();
        if scores.is_empty() {
            continue;
        }
        per_category.push(CategoryScore {
            category: name.clone(),
            count: scores.len(),
            mean_iou: scores.iter().sum::<f64>() / scores.len() as f64,
            threshold: th,
        });
    }
    let mean_iou = if per_category.is_empty() {
        0.0
    } else {
        per_category.iter().map(|c| c.mean_iou).sum::<f64>() / per_category.len() as f64
    };
    LocalizationReport {
        per_category,
        mean_iou,
        aligned: set.items.len(),
        unaligned: set.unaligned,
    }
}

pub fn localization_accuracy(set: &AlignmentSet, inventory: &Inventory, thresholds: &[f64]) -> LocalizationReport {
    report_with(set, inventory, thresholds, |a, th| a.score(set.size, th))
}

/// The same report for attention spread evenly over the grid.
pub fn uniform_baseline(set: &AlignmentSet, inventory: &Inventory) -> LocalizationReport {
    report_with(set, inventory, &[], |a, _| a.uniform_score(set.size))
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EntropyRow {
    pub token: String,
    pub count: usize,
    pub mean_entropy: f64,
}

/// Mean entropy of the renormalized spatial attention per token, restricted
/// to `tokens` when given. Rows are ordered by token.
pub fn attention_entropy_report(traces: &TraceSet, tokens: Option<&[&str]>) -> Vec<EntropyRow> {
    let k = traces.regions();
    let mut acc: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for r in &traces.records {
        if tokens.is_some_and(|ts| !ts.contains(&r.token.as_str())) {
            continue;
        }
        let e = acc.entry(r.token.as_str()).or_default();
        e.0 += 1;
        e.1 += entropy(&spatial_map(&r.alpha_hat, k));
    }
    acc.into_iter()
        .map(|(t, (n, s))| EntropyRow {
            token: t.to_string(),
            count: n,
            mean_entropy: s / n as f64,
        })
        .collect()
}

/// Binary grayscale image of a `size × size` map scaled so its maximum is white.
pub fn write_pgm(out: &mut impl Write, map: &[f64], size: usize) -> Result<()> {
    if map.len() != size * size {
        return Err(Error::contract("map must be size × size"));
    }
    let max = map.iter().copied().fold(0.0, f64::max);
    write!(out, "P5\n{size} {size}\n255\n")?;
    let pixels: Vec<u8> = map
        .iter()
        .map(|v| if max > 0.0 { (v / max * 255.0).round().clamp(0.0, 255.0) as u8 } else { 0 })
        .collect();
    out.write_all(&pixels)?;
    Ok(())
}
