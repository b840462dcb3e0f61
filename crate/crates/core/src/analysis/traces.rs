//! Line-delimited JSON attention traces: a header, then one record per
//! emitted token.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::captioner::Variant;
use crate::error::{Error, Result};

pub const TRACE_FORMAT: &str = "sentinel-trace";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceHeader {
    pub format: String,
    pub version: u32,
    pub variant: Variant,
    pub grid: usize,
    pub canvas: usize,
}

impl TraceHeader {
    pub fn new(variant: Variant, grid: usize, canvas: usize) -> Self {
        TraceHeader {
            format: TRACE_FORMAT.into(),
            version: VERSION,
            variant,
            grid,
            canvas,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub scene: u64,
    pub step: usize,
    pub token: String,
    pub beta: f64,
    /// Attention over the regions, followed by the sentinel share for the
    /// adaptive model.
    pub alpha_hat: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceSet {
    pub header: TraceHeader,
    pub records: Vec<TraceRecord>,
}

impl TraceSet {
    pub fn regions(&self) -> usize {
        self.header.grid * self.header.grid
    }

    /// Records grouped by scene, in file order.
    pub fn captions(&self) -> Vec<(u64, &[TraceRecord])> {
        let mut out: Vec<(u64, &[TraceRecord])> = Vec::new();
        let mut start = 0;
        for i in 1..=self.records.len() {
            if i == self.records.len() || self.records[i].scene != self.records[start].scene {
                out.push((self.records[start].scene, &self.records[start..i]));
                start = i;
            }
        }
        out
    }
}

pub fn parse_trace_line(line: &str, header: &TraceHeader) -> Result<TraceRecord> {
    let rec: TraceRecord =
        serde_json::from_str(line).map_err(|e| Error::format(format!("trace record: {e}")))?;
    let k = header.grid * header.grid;
    let want = match header.variant {
        Variant::Spatial => k,
        Variant::Adaptive => k + 1,
    };
    if rec.alpha_hat.len() != want {
        return Err(Error::format(format!(
            "scene {} step {}: alpha_hat has {} entries, expected {want}",
            rec.scene,
            rec.step,
            rec.alpha_hat.len()
        )));
    }
    if !rec.beta.is_finite() || !(0.0..=1.0).contains(&rec.beta) {
        return Err(Error::format(format!("scene {} step {}: beta {} outside [0, 1]", rec.scene, rec.step, rec.beta)));
    }
    if rec.alpha_hat.iter().any(|a| !a.is_finite() || *a < 0.0) {
        return Err(Error::format(format!("scene {} step {}: invalid attention weight", rec.scene, rec.step)));
    }
    Ok(rec)
}

pub fn parse_traces(text: &str) -> Result<TraceSet> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or_else(|| Error::format("empty trace file"))?;
    let header: TraceHeader =
        serde_json::from_str(first).map_err(|e| Error::format(format!("trace header: {e}")))?;
    if header.format != TRACE_FORMAT || header.version != VERSION {
        return Err(Error::format(format!(
            "expected {TRACE_FORMAT} v{VERSION}, found {} v{}",
            header.format, header.version
        )));
    }
    if header.grid == 0 || header.canvas < header.grid || header.grid > 1 << 12 {
        return Err(Error::format(format!("implausible grid {} on canvas {}", header.grid, header.canvas)));
    }
    let records = lines
        .map(|(n, l)| parse_trace_line(l, &header).map_err(|e| Error::format(format!("line {}: {e}", n + 1))))
        .collect::<Result<Vec<_>>>()?;
    Ok(TraceSet { header, records })
}

pub fn read_traces(path: &Path) -> Result<TraceSet> {
    let text = std::fs::read_to_string(path)?;
    parse_traces(&text).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn line(v: &impl Serialize) -> String {
    serde_json::to_string(v).expect("trace records serialize")
}

pub fn write_traces(out: &mut impl Write, set: &TraceSet) -> Result<()> {
    writeln!(out, "{}", line(&set.header))?;
    for r in &set.records {
        writeln!(out, "{}", line(r))?;
    }
    Ok(())
}
