//! Synthetic grid scenes with templated captions, vocabulary and splits.
//!
//! A scene is a `grid × grid` board on a square canvas. Each occupied cell
//! holds one colored shape whose pixel box sits inside the cell. Every scene
//! carries two reference captions: a list of its objects in raster order and
//! one of three alternative phrasings.

mod corpus_io;
mod templates;
mod vocab;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cell_box, BBox};

pub use corpus_io::{parse_corpus, parse_scene_line, read_corpus, write_corpus, CORPUS_FORMAT};
pub use templates::{render, Template, FUNCTION_TOKENS};
pub use vocab::{
    build_vocab, parse_vocab, read_vocab, truncate, Vocabulary, END, PAD, RESERVED, START, UNK,
    VOCAB_FORMAT,
};

/// An alternative surface form for a category or color name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Synonym {
    pub word: String,
    pub canonical: String,
    /// Chance that a mention of `canonical` is rendered as `word`.
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Inventory {
    pub categories: Vec<String>,
    pub colors: Vec<String>,
    pub synonyms: Vec<Synonym>,
}

impl Default for Inventory {
    fn default() -> Self {
        let names = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        let syn = |word: &str, canonical: &str, probability: f64| Synonym {
            word: word.into(),
            canonical: canonical.into(),
            probability,
        };
        Inventory {
            categories: names(&["circle", "square", "triangle", "star", "cross", "heart"]),
            colors: names(&["red", "green", "blue", "yellow", "purple"]),
            synonyms: vec![
                syn("disk", "circle", 0.08),
                syn("block", "square", 0.08),
                syn("plus", "cross", 0.08),
                syn("violet", "purple", 0.08),
                syn("ring", "circle", 0.002),
                syn("wedge", "triangle", 0.002),
                syn("crimson", "red", 0.002),
            ],
        }
    }
}

impl Inventory {
    pub fn validate(&self) -> Result<()> {
        if self.categories.is_empty() || self.colors.is_empty() {
            return Err(Error::contract("category and color inventories must be non-empty"));
        }
        let mut seen = std::collections::HashSet::new();
        for w in self.categories.iter().chain(&self.colors) {
            if w.is_empty() || w.contains(char::is_whitespace) {
                return Err(Error::contract(format!("invalid inventory word {w:?}")));
            }
            if !seen.insert(w.as_str()) {
                return Err(Error::contract(format!("duplicate inventory word {w:?}")));
            }
        }
        for s in &self.synonyms {
            if !(0.0..=1.0).contains(&s.probability) {
                return Err(Error::contract(format!("synonym {:?} probability out of range", s.word)));
            }
            if !seen.contains(s.canonical.as_str()) {
                return Err(Error::contract(format!("synonym {:?} names unknown word {:?}", s.word, s.canonical)));
            }
            if s.word.is_empty() || s.word.contains(char::is_whitespace) {
                return Err(Error::contract(format!("invalid synonym {:?}", s.word)));
            }
        }
        Ok(())
    }

    fn canonical<'a>(&'a self, token: &'a str) -> &'a str {
        self.synonyms
            .iter()
            .find(|s| s.word == token)
            .map_or(token, |s| s.canonical.as_str())
    }

    /// Category named by `token`, accepting synonyms.
    pub fn category_of(&self, token: &str) -> Option<usize> {
        let c = self.canonical(token);
        self.categories.iter().position(|x| x == c)
    }

    /// Color named by `token`, accepting synonyms.
    pub fn color_of(&self, token: &str) -> Option<usize> {
        let c = self.canonical(token);
        self.colors.iter().position(|x| x == c)
    }

    /// Words that refer to scene content: names and their synonyms.
    pub fn is_visual_word(&self, token: &str) -> bool {
        self.category_of(token).is_some() || self.color_of(token).is_some()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneObject {
    pub row: usize,
    pub col: usize,
    pub category: usize,
    pub color: usize,
    pub bbox: BBox,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneInstance {
    pub id: u64,
    pub grid: usize,
    pub canvas: usize,
    /// Objects in raster order of their cells.
    pub objects: Vec<SceneObject>,
    pub references: Vec<Vec<String>>,
}

impl SceneInstance {
    pub fn regions(&self) -> usize {
        self.grid * self.grid
    }

    /// Cell contents indexed by region `row * grid + col`.
    pub fn cells(&self) -> Vec<Option<(usize, usize)>> {
        let mut cells = vec![None; self.regions()];
        for o in &self.objects {
            cells[o.row * self.grid + o.col] = Some((o.category, o.color));
        }
        cells
    }

    pub fn boxes_of(&self, category: usize) -> impl Iterator<Item = &BBox> {
        self.objects
            .iter()
            .filter(move |o| o.category == category)
            .map(|o| &o.bbox)
    }

    pub fn validate(&self, inventory: &Inventory) -> Result<()> {
        if self.grid == 0 || self.canvas < self.grid {
            return Err(Error::contract(format!(
                "scene {}: canvas {} cannot hold a {}-cell grid",
                self.id, self.canvas, self.grid
            )));
        }
        if self.references.is_empty() {
            return Err(Error::contract(format!("scene {} has no reference caption", self.id)));
        }
        if self.references.iter().any(|r| r.is_empty()) {
            return Err(Error::contract(format!("scene {} has an empty caption", self.id)));
        }
        let mut last: Option<usize> = None;
        for o in &self.objects {
            if o.row >= self.grid || o.col >= self.grid {
                return Err(Error::contract(format!("scene {}: cell ({}, {}) off the grid", self.id, o.row, o.col)));
            }
            let idx = o.row * self.grid + o.col;
            if last.is_some_and(|l| l >= idx) {
                return Err(Error::contract(format!(
                    "scene {}: objects must occupy distinct cells in raster order",
                    self.id
                )));
            }
            last = Some(idx);
            if o.category >= inventory.categories.len() || o.color >= inventory.colors.len() {
                return Err(Error::contract(format!("scene {}: object outside the inventory", self.id)));
            }
            let b = &o.bbox;
            if b.x0 >= b.x1 || b.y0 >= b.y1 || !b.within(self.canvas) {
                return Err(Error::contract(format!("scene {}: box {:?} outside the canvas", self.id, b.to_array())));
            }
            let cell = cell_box(o.row, o.col, self.grid, self.canvas);
            let (cx, cy) = b.center();
            let inside = |v: f64, lo: usize, hi: usize| v >= lo as f64 && v < hi as f64;
            if !inside(cx, cell.x0, cell.x1) || !inside(cy, cell.y0, cell.y1) {
                return Err(Error::contract(format!(
                    "scene {}: box {:?} centered outside cell ({}, {})",
                    self.id,
                    b.to_array(),
                    o.row,
                    o.col
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusConfig {
    pub seed: u64,
    pub n_scenes: usize,
    pub grid: usize,
    pub canvas: usize,
    pub min_objects: usize,
    pub max_objects: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            seed: 0,
            n_scenes: 2400,
            grid: 7,
            canvas: 224,
            min_objects: 1,
            max_objects: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub grid: usize,
    pub canvas: usize,
    pub inventory: Inventory,
    pub scenes: Vec<SceneInstance>,
}

/// Generator for scene `id`; a pure function of `(seed, id)`.
fn scene_rng(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn generate_scene(cfg: &CorpusConfig, inventory: &Inventory, id: u64) -> SceneInstance {
    let mut rng = scene_rng(cfg.seed, id);
    let k = cfg.grid * cfg.grid;
    let n = rng.gen_range(cfg.min_objects..=cfg.max_objects);
    let mut cells = rand::seq::index::sample(&mut rng, k, n).into_vec();
    cells.sort_unstable();
    let objects = cells
        .into_iter()
        .map(|idx| {
            let (row, col) = (idx / cfg.grid, idx % cfg.grid);
            let cell = cell_box(row, col, cfg.grid, cfg.canvas);
            let mut side = |lo: usize, hi: usize| {
                let extent = hi - lo;
                let s = rng.gen_range(extent.div_ceil(2)..=extent);
                let start = rng.gen_range(lo..=hi - s);
                (start, start + s)
            };
            let (x0, x1) = side(cell.x0, cell.x1);
            let (y0, y1) = side(cell.y0, cell.y1);
            SceneObject {
                row,
                col,
                category: rng.gen_range(0..inventory.categories.len()),
                color: rng.gen_range(0..inventory.colors.len()),
                bbox: BBox { x0, y0, x1, y1 },
            }
        })
        .collect::<Vec<_>>();
    let first = render(Template::List, &objects, cfg.grid, inventory, &mut rng);
    let alt = [Template::Relation, Template::Count, Template::Picture][rng.gen_range(0..3)];
    let second = render(alt, &objects, cfg.grid, inventory, &mut rng);
    SceneInstance {
        id,
        grid: cfg.grid,
        canvas: cfg.canvas,
        objects,
        references: vec![first, second],
    }
}

/// Scenes `0..n_scenes`, each generated independently from the seed.
pub fn generate_corpus(cfg: &CorpusConfig, inventory: &Inventory) -> Result<Corpus> {
    inventory.validate()?;
    let k = cfg.grid * cfg.grid;
    if cfg.min_objects == 0 || cfg.min_objects > cfg.max_objects {
        return Err(Error::contract(format!(
            "object count range {}..={} is empty or includes zero",
            cfg.min_objects, cfg.max_objects
        )));
    }
    if cfg.max_objects > k {
        return Err(Error::contract(format!(
            "a {g}×{g} grid cannot hold {} objects",
            cfg.max_objects,
            g = cfg.grid
        )));
    }
    if cfg.canvas < cfg.grid {
        return Err(Error::contract(format!(
            "canvas of {} pixels is smaller than the {}-cell grid",
            cfg.canvas, cfg.grid
        )));
    }
    let scenes = (0..cfg.n_scenes as u64)
        .map(|id| generate_scene(cfg, inventory, id))
        .collect();
    Ok(Corpus {
        grid: cfg.grid,
        canvas: cfg.canvas,
        inventory: inventory.clone(),
        scenes,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Vec<SceneInstance>,
    pub val: Vec<SceneInstance>,
    pub test: Vec<SceneInstance>,
}

/// Seeded shuffle followed by a contiguous train/val/test cut. Train and
/// validation sizes are rounded; the test split takes the remainder.
pub fn split(scenes: Vec<SceneInstance>, fractions: [f64; 3], seed: u64) -> Result<Splits> {
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) {
        return Err(Error::Config(format!("split fractions {fractions:?} must be non-negative")));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions sum to {total}, not 1")));
    }
    let n = scenes.len();
    let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    let mut scenes = scenes;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rand::seq::SliceRandom::shuffle(scenes.as_mut_slice(), &mut rng);
    let test = scenes.split_off(n_train + n_val);
    let val = scenes.split_off(n_train);
    Ok(Splits {
        train: scenes,
        val,
        test,
    })
}
