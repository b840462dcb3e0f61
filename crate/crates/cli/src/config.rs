//! INI run configuration. Top-level keys apply to every command; each
//! command reads its own `[section]`. Flags override file values.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use ini::Ini;

use crate::CliError;

/// `(key, default, description)` for one setting.
pub type KeySpec = (&'static str, &'static str, &'static str);

pub const GLOBAL_KEYS: &[KeySpec] = &[
    ("seed", "0", "seed for corpus generation, initialization and shuffling"),
    ("out", "run", "directory receiving every artifact"),
];

pub const GEN_KEYS: &[KeySpec] = &[
    ("train_scenes", "2000", "scenes in the training split"),
    ("val_scenes", "200", "scenes in the validation split"),
    ("test_scenes", "200", "scenes in the test split"),
    ("grid", "7", "cells per side of the scene grid"),
    ("canvas", "224", "canvas side in pixels"),
    ("min_objects", "1", "fewest objects per scene"),
    ("max_objects", "4", "most objects per scene"),
    ("min_count", "5", "training occurrences a word needs to enter the vocabulary"),
    ("max_caption_len", "12", "content tokens kept per caption"),
];

pub const TRAIN_KEYS: &[KeySpec] = &[
    ("data", "", "corpus directory (defaults to the output directory)"),
    ("model", "adaptive", "spatial or adaptive"),
    ("learning_rate", "0.002", "Adam step size"),
    ("beta1", "0.8", "Adam first-moment decay"),
    ("beta2", "0.999", "Adam second-moment decay"),
    ("epsilon", "1e-8", "Adam denominator offset"),
    ("batch_size", "16", "captions per update"),
    ("max_epochs", "30", "epoch limit"),
    ("patience", "6", "epochs without validation gain before stopping"),
    ("val_beam", "3", "beam width for validation decoding"),
    ("max_caption_len", "12", "content tokens kept per caption"),
    ("d", "64", "attention feature size"),
    ("d_embed", "32", "word embedding size"),
    ("hidden", "64", "LSTM hidden size"),
];

pub const EVAL_KEYS: &[KeySpec] = &[
    ("data", "", "corpus directory (defaults to the output directory)"),
    ("model", "adaptive", "spatial or adaptive"),
    ("checkpoint", "", "checkpoint file (defaults to <out>/<model>.ckpt)"),
    ("beam", "3", "beam width"),
    ("greedy", "false", "decode greedily instead of with beam search"),
    ("max_caption_len", "12", "content tokens per decoded caption"),
];

pub const ANALYZE_KEYS: &[KeySpec] = &[
    ("data", "", "corpus directory (defaults to the output directory)"),
    ("traces", "", "test traces (defaults to <out>/adaptive.test.trace.jsonl)"),
    ("val_traces", "", "validation traces for threshold estimation (defaults to the test path with test replaced by val)"),
    ("compare", "", "second test trace set for the comparison row"),
    ("compare_val", "", "validation traces of the second set"),
    ("maps", "8", "scenes whose attention maps are exported"),
];

pub const SECTIONS: &[(&str, &[KeySpec])] = &[
    ("gen", GEN_KEYS),
    ("train", TRAIN_KEYS),
    ("eval", EVAL_KEYS),
    ("analyze", ANALYZE_KEYS),
];

/// Resolved settings of one section: file values over defaults, flags over both.
#[derive(Clone, Debug)]
pub struct Settings {
    section: &'static str,
    values: BTreeMap<&'static str, String>,
}

impl Settings {
    fn new(section: &'static str, keys: &[KeySpec]) -> Self {
        Settings {
            section,
            values: keys.iter().map(|&(k, d, _)| (k, d.to_string())).collect(),
        }
    }

    fn set_from_file(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match self.values.keys().find(|k| **k == key) {
            Some(&k) => {
                self.values.insert(k, value.trim().to_string());
                Ok(())
            }
            None => Err(CliError::Config(format!(
                "unknown key `{key}` in {}",
                if self.section.is_empty() { "the top level".to_string() } else { format!("[{}]", self.section) }
            ))),
        }
    }

    /// Override a value from the command line; `None` keeps the current one.
    pub fn set(&mut self, key: &'static str, value: Option<String>) {
        assert!(self.values.contains_key(key), "flag maps to undeclared key {key}");
        if let Some(v) = value {
            self.values.insert(key, v);
        }
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("undeclared key {key}"))
    }

    /// Empty values mean "use the documented fallback".
    pub fn optional(&self, key: &str) -> Option<&str> {
        Some(self.raw(key)).filter(|v| !v.is_empty())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(key);
        raw.parse().map_err(|e| {
            let scope = if self.section.is_empty() { String::new() } else { format!("[{}] ", self.section) };
            CliError::Config(format!("{scope}{key} = {raw:?}: {e}"))
        })
    }
}

/// Every section of a configuration file.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub global: Settings,
    sections: Vec<Settings>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            global: Settings::new("", GLOBAL_KEYS),
            sections: SECTIONS.iter().map(|&(n, k)| Settings::new(n, k)).collect(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let ini = Ini::load_from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))?;
        let mut cfg = RunConfig::default();
        for (section, props) in ini.iter() {
            let target = match section {
                None => &mut cfg.global,
                Some(name) => cfg
                    .sections
                    .iter_mut()
                    .find(|s| s.section == name)
                    .ok_or_else(|| CliError::Config(format!("unknown section [{name}]")))?,
            };
            for (k, v) in props.iter() {
                target.set_from_file(k, v)?;
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn section(&self, name: &str) -> Settings {
        self.sections
            .iter()
            .find(|s| s.section == name)
            .unwrap_or_else(|| panic!("undeclared section {name}"))
            .clone()
    }
}

/// The configuration reference, as printed by `sentinel config`.
pub fn reference() -> String {
    let mut out = String::new();
    let mut block = |title: Option<&str>, keys: &[KeySpec]| {
        if let Some(t) = title {
            out.push_str(&format!("\n[{t}]\n"));
        }
        for (k, d, doc) in keys {
            out.push_str(&format!("# {doc}\n{k} = {d}\n").replace(" \n", "\n"));
        }
    };
    block(None, GLOBAL_KEYS);
    for (name, keys) in SECTIONS {
        block(Some(name), keys);
    }
    out
}
