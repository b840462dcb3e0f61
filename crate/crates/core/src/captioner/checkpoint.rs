//! Plain-text checkpoints. Values are written in shortest round-trip
//! exponent form, so reloading reproduces every bit.
//!
//! ```text
//! sentinel-checkpoint v1
//! variant adaptive
//! vocab 31
//! k 49
//! d_raw 24
//! d 64
//! d_embed 32
//! hidden 64
//! vocab_digest 3f1c...
//! tensor embedding 31 32
//! <one line of space-separated values per row>
//! ...
//! end
//! ```

use std::fmt::Write as _;
use std::path::Path;

use super::{ModelConfig, ModelParams};
use crate::attention::AttentionParams;
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::recurrent::LstmParams;
use crate::tensor::{Shape, Tensor};

pub const CHECKPOINT_FORMAT: &str = "sentinel-checkpoint v1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub vocab_digest: String,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let c = &self.params.config;
        let mut out = String::new();
        let _ = writeln!(out, "{CHECKPOINT_FORMAT}");
        let _ = writeln!(out, "variant {}", c.variant);
        for (key, v) in header_fields(c) {
            let _ = writeln!(out, "{key} {v}");
        }
        let _ = writeln!(out, "vocab_digest {}", self.vocab_digest);
        for (name, t) in self.params.named() {
            let dims: Vec<String> = t.dims().iter().map(|d| d.to_string()).collect();
            let _ = writeln!(out, "tensor {name} {}", dims.join(" "));
            let width = row_width(t.dims());
            if width == 0 {
                continue;
            }
            for row in t.data().chunks(width) {
                let vals: Vec<String> = row.iter().map(|x| format!("{x:e}")).collect();
                let _ = writeln!(out, "{}", vals.join(" "));
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Reject checkpoints whose parameter shapes differ from `expected`.
    pub fn expect_config(&self, expected: &ModelConfig) -> Result<()> {
        let want = ModelParams::expected_shapes(expected);
        for ((name, t), (_, w)) in self.params.named().into_iter().zip(want) {
            if t.dims() != w.as_slice() {
                return Err(Error::format(format!(
                    "{name}: checkpoint has {} but the model expects {}",
                    t.shape(),
                    Shape::new(w)
                )));
            }
        }
        if self.params.config.variant != expected.variant {
            return Err(Error::format(format!(
                "checkpoint is a {} model, expected {}",
                self.params.config.variant, expected.variant
            )));
        }
        Ok(())
    }
}

fn header_fields(c: &ModelConfig) -> [(&'static str, usize); 6] {
    [
        ("vocab", c.vocab),
        ("k", c.k),
        ("d_raw", c.d_raw),
        ("d", c.d),
        ("d_embed", c.d_embed),
        ("hidden", c.hidden),
    ]
}

fn row_width(dims: &[usize]) -> usize {
    match dims {
        [] => 1,
        [n] => *n,
        [_, cols] => *cols,
        _ => dims[1..].iter().product(),
    }
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        self.inner
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| Error::format(format!("checkpoint ends before {what}")))
    }

    fn keyed(&mut self, key: &str) -> Result<(usize, &'a str)> {
        let (n, line) = self.next(key)?;
        let value = line
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| Error::format(format!("line {n}: expected `{key} ...`, found {line:?}")))?;
        Ok((n, value))
    }
}

pub fn parse_checkpoint(text: &str) -> Result<Checkpoint> {
    let mut lines = Lines { inner: text.lines().enumerate() };
    let (_, header) = lines.next("the header")?;
    if header != CHECKPOINT_FORMAT {
        return Err(Error::format(format!("expected {CHECKPOINT_FORMAT:?}, found {header:?}")));
    }
    let (n, variant) = lines.keyed("variant")?;
    let variant = variant
        .parse()
        .map_err(|_| Error::format(format!("line {n}: unknown variant {variant:?}")))?;
    let mut dims = [0usize; 6];
    for (i, key) in ["vocab", "k", "d_raw", "d", "d_embed", "hidden"].iter().enumerate() {
        let (n, v) = lines.keyed(key)?;
        dims[i] = v
            .parse()
            .map_err(|_| Error::format(format!("line {n}: bad {key} {v:?}")))?;
    }
    let config = ModelConfig {
        variant,
        vocab: dims[0],
        k: dims[1],
        d_raw: dims[2],
        d: dims[3],
        d_embed: dims[4],
        hidden: dims[5],
    };
    config.validate().map_err(|e| Error::format(e.to_string()))?;
    // Bound the allocation a hostile header can request.
    let expected = ModelParams::expected_shapes(&config);
    let total = expected.iter().try_fold(0usize, |acc, (_, d)| {
        d.iter().try_fold(1usize, |p, &x| p.checked_mul(x)).and_then(|n| acc.checked_add(n))
    });
    if !total.is_some_and(|t| t <= text.len()) {
        return Err(Error::format("header declares more values than the file can hold"));
    }
    let (_, digest) = lines.keyed("vocab_digest")?;
    let digest = digest.to_string();

    let mut tensors = Vec::with_capacity(expected.len());
    for (name, want) in &expected {
        let (n, spec) = lines.keyed("tensor")?;
        let mut parts = spec.split(' ');
        let found_name = parts.next().unwrap_or("");
        if found_name != name {
            return Err(Error::format(format!("line {n}: expected tensor {name}, found {found_name:?}")));
        }
        let found: Vec<usize> = parts
            .map(|p| p.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::format(format!("line {n}: bad shape for {name}")))?;
        if &found != want {
            return Err(Error::format(format!(
                "{name}: checkpoint has {} but its header implies {}",
                Shape::new(found),
                Shape::new(want.clone())
            )));
        }
        let numel: usize = want.iter().product();
        let width = row_width(want);
        let mut data = Vec::with_capacity(numel);
        while data.len() < numel {
            let (n, row) = lines.next(name)?;
            let before = data.len();
            for tok in row.split(' ') {
                let x: f64 = tok
                    .parse()
                    .map_err(|_| Error::format(format!("line {n}: bad value {tok:?} in {name}")))?;
                data.push(x);
            }
            if data.len() - before != width {
                return Err(Error::format(format!(
                    "line {n}: {name} row has {} values, expected {width}",
                    data.len() - before
                )));
            }
        }
        tensors.push(Tensor::new(want.clone(), data)?);
    }
    let (n, end) = lines.next("end")?;
    if end != "end" {
        return Err(Error::format(format!("line {n}: expected `end`, found {end:?}")));
    }
    if let Some((n, extra)) = lines.inner.next() {
        if !extra.is_empty() {
            return Err(Error::format(format!("line {}: trailing content after `end`", n + 1)));
        }
    }

    let mut it = tensors.into_iter();
    let mut take = || it.next().expect("one tensor per expected shape");
    let embedding = take();
    let encoder = EncoderParams::from_fn(|_| take());
    let lstm = LstmParams::from_fn(|_| take());
    let attention = AttentionParams::from_fn(|_| take());
    let params = ModelParams {
        config,
        embedding,
        encoder,
        lstm,
        attention,
    };
    Ok(Checkpoint {
        params,
        vocab_digest: digest,
    })
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)?;
    parse_checkpoint(&text).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}
