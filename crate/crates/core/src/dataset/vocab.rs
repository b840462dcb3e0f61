use std::collections::HashMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const START: usize = 1;
pub const END: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<start>", "<end>", "<unk>"];

pub const VOCAB_FORMAT: &str = "# sentinel-vocab v1";

#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<usize>,
    index: HashMap<String, usize>,
    min_count: usize,
}

/// First `max_len` tokens of a caption.
pub fn truncate(tokens: &[String], max_len: usize) -> &[String] {
    &tokens[..tokens.len().min(max_len)]
}

/// Keep tokens seen at least `min_count` times; ids after the reserved block
/// follow descending count, then token order.
pub fn build_vocab<'a>(
    captions: impl IntoIterator<Item = &'a [String]>,
    min_count: usize,
) -> Result<Vocabulary> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut n_captions = 0;
    for caption in captions {
        n_captions += 1;
        for t in caption {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    if n_captions == 0 {
        return Err(Error::contract("cannot build a vocabulary from no captions"));
    }
    if let Some(t) = RESERVED.iter().find(|t| counts.contains_key(**t)) {
        return Err(Error::contract(format!("caption uses reserved token {t}")));
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_count)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let entries = RESERVED
        .iter()
        .map(|t| (t.to_string(), 0))
        .chain(kept.into_iter().map(|(t, c)| (t.to_string(), c)));
    Vocabulary::from_entries(entries, min_count)
}

impl Vocabulary {
    fn from_entries(entries: impl IntoIterator<Item = (String, usize)>, min_count: usize) -> Result<Self> {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            counts: Vec::new(),
            index: HashMap::new(),
            min_count,
        };
        for (t, c) in entries {
            if v.index.insert(t.clone(), v.tokens.len()).is_some() {
                return Err(Error::format(format!("duplicate vocabulary token {t:?}")));
            }
            v.tokens.push(t);
            v.counts.push(c);
        }
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    /// Id of `token`, or `UNK` when it is out of vocabulary.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn count(&self, id: usize) -> usize {
        self.counts[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_reserved(id: usize) -> bool {
        id < RESERVED.len()
    }

    /// `<start>`, at most `max_len` content ids, `<end>`.
    pub fn encode(&self, tokens: &[String], max_len: usize) -> Vec<usize> {
        std::iter::once(START)
            .chain(truncate(tokens, max_len).iter().map(|t| self.id(t)))
            .chain(std::iter::once(END))
            .collect()
    }

    /// Content tokens up to the first `<end>`, without `<start>` or `<pad>`.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .take_while(|&&i| i != END)
            .filter(|&&i| i != START && i != PAD)
            .map(|&i| self.tokens[i].clone())
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["token", "count", "id"]).expect("in-memory write");
        for (id, (t, c)) in self.tokens.iter().zip(&self.counts).enumerate() {
            w.write_record([t.as_str(), &c.to_string(), &id.to_string()])
                .expect("in-memory write");
        }
        let body = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 tokens");
        format!("{VOCAB_FORMAT} min_count={}\n{body}", self.min_count)
    }

    /// Hex SHA-256 of the serialized vocabulary; ties checkpoints to vocabularies.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.to_csv().as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

pub fn parse_vocab(text: &str) -> Result<Vocabulary> {
    let (header, body) = text.split_once('\n').unwrap_or((text, ""));
    let min_count = header
        .strip_prefix(VOCAB_FORMAT)
        .and_then(|rest| rest.trim().strip_prefix("min_count="))
        .and_then(|n| n.parse::<usize>().ok())
        .ok_or_else(|| Error::format(format!("bad vocabulary header {header:?}")))?;
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let headers = reader.headers().map_err(|e| Error::format(e.to_string()))?;
    if headers != vec!["token", "count", "id"] {
        return Err(Error::format("vocabulary columns must be token,count,id"));
    }
    let mut entries = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(e.to_string()))?;
        if rec.len() != 3 {
            return Err(Error::format(format!("vocabulary row {row} has {} fields", rec.len())));
        }
        let count = rec[1]
            .parse::<usize>()
            .map_err(|_| Error::format(format!("vocabulary row {row}: bad count {:?}", &rec[1])))?;
        let id = rec[2]
            .parse::<usize>()
            .map_err(|_| Error::format(format!("vocabulary row {row}: bad id {:?}", &rec[2])))?;
        if id != row {
            return Err(Error::format(format!("vocabulary ids must be dense; row {row} has id {id}")));
        }
        entries.push((rec[0].to_string(), count));
    }
    if entries.len() < RESERVED.len()
        || entries.iter().zip(RESERVED).any(|((t, _), r)| t != r)
    {
        return Err(Error::format("vocabulary must start with the reserved tokens"));
    }
    Vocabulary::from_entries(entries, min_count)
}

pub fn read_vocab(path: &Path) -> Result<Vocabulary> {
    parse_vocab(&std::fs::read_to_string(path)?)
}
