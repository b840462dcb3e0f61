//! Line-delimited JSON corpus files: a header record describing the grid and
//! inventory, then one record per scene.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, Inventory, SceneInstance, SceneObject};
use crate::error::{Error, Result};
use crate::geometry::BBox;

pub const CORPUS_FORMAT: &str = "sentinel-corpus";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    grid: usize,
    canvas: usize,
    inventory: Inventory,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectRecord {
    row: usize,
    col: usize,
    category: String,
    color: String,
    #[serde(rename = "box")]
    bbox: [usize; 4],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneRecord {
    id: u64,
    objects: Vec<ObjectRecord>,
    captions: Vec<String>,
}

fn to_record(scene: &SceneInstance, inventory: &Inventory) -> SceneRecord {
    SceneRecord {
        id: scene.id,
        objects: scene
            .objects
            .iter()
            .map(|o| ObjectRecord {
                row: o.row,
                col: o.col,
                category: inventory.categories[o.category].clone(),
                color: inventory.colors[o.color].clone(),
                bbox: o.bbox.to_array(),
            })
            .collect(),
        captions: scene.references.iter().map(|r| r.join(" ")).collect(),
    }
}

/// Parse one scene line against a known grid and inventory.
pub fn parse_scene_line(line: &str, grid: usize, canvas: usize, inventory: &Inventory) -> Result<SceneInstance> {
    let rec: SceneRecord =
        serde_json::from_str(line).map_err(|e| Error::format(format!("scene record: {e}")))?;
    let objects = rec
        .objects
        .into_iter()
        .map(|o| {
            let category = inventory
                .categories
                .iter()
                .position(|c| *c == o.category)
                .ok_or_else(|| Error::format(format!("scene {}: unknown category {:?}", rec.id, o.category)))?;
            let color = inventory
                .colors
                .iter()
                .position(|c| *c == o.color)
                .ok_or_else(|| Error::format(format!("scene {}: unknown color {:?}", rec.id, o.color)))?;
            let [x0, y0, x1, y1] = o.bbox;
            Ok(SceneObject {
                row: o.row,
                col: o.col,
                category,
                color,
                bbox: BBox { x0, y0, x1, y1 },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let scene = SceneInstance {
        id: rec.id,
        grid,
        canvas,
        objects,
        references: rec
            .captions
            .iter()
            .map(|c| c.split_whitespace().map(String::from).collect())
            .collect(),
    };
    scene.validate(inventory).map_err(|e| match e {
        Error::Contract(m) => Error::Format(m),
        other => other,
    })?;
    Ok(scene)
}

pub fn parse_corpus(text: &str) -> Result<Corpus> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or_else(|| Error::format("empty corpus file"))?;
    let header: Header =
        serde_json::from_str(first).map_err(|e| Error::format(format!("corpus header: {e}")))?;
    if header.format != CORPUS_FORMAT || header.version != VERSION {
        return Err(Error::format(format!(
            "expected {CORPUS_FORMAT} v{VERSION}, found {} v{}",
            header.format, header.version
        )));
    }
    header
        .inventory
        .validate()
        .map_err(|e| Error::format(e.to_string()))?;
    if header.grid == 0 || header.canvas < header.grid {
        return Err(Error::format(format!(
            "canvas {} cannot hold grid {}",
            header.canvas, header.grid
        )));
    }
    let scenes = lines
        .map(|(n, l)| {
            parse_scene_line(l, header.grid, header.canvas, &header.inventory)
                .map_err(|e| Error::format(format!("line {}: {e}", n + 1)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ids: Vec<u64> = scenes.iter().map(|s| s.id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::format("duplicate scene id"));
    }
    Ok(Corpus {
        grid: header.grid,
        canvas: header.canvas,
        inventory: header.inventory,
        scenes,
    })
}

pub fn read_corpus(path: &Path) -> Result<Corpus> {
    let text = std::fs::read_to_string(path)?;
    parse_corpus(&text).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn line(v: &impl Serialize) -> String {
    serde_json::to_string(v).expect("plain records serialize")
}

pub fn write_corpus(
    out: &mut impl Write,
    grid: usize,
    canvas: usize,
    inventory: &Inventory,
    scenes: &[SceneInstance],
) -> Result<()> {
    let header = Header {
        format: CORPUS_FORMAT.into(),
        version: VERSION,
        grid,
        canvas,
        inventory: inventory.clone(),
    };
    writeln!(out, "{}", line(&header))?;
    for s in scenes {
        writeln!(out, "{}", line(&to_record(s, inventory)))?;
    }
    Ok(())
}

