//! The four pipeline commands. Each gathers its outputs in memory, refuses to
//! replace existing files unless forced, then writes them in one pass.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sentinel_core::analysis::{
    align, attention_entropy_report, estimate_thresholds, grounding_separation, grounding_table, localization_accuracy,
    read_traces, spatial_map, uniform_baseline, upsample_bilinear, write_pgm, write_traces, EntropyRow, GroundingRow,
    LocalizationReport, TraceHeader, TraceRecord, TraceSet,
};
use sentinel_core::captioner::{
    decode_beam, decode_greedy, format_log, read_checkpoint, AdamConfig, Checkpoint, EpochLog, Hypothesis, ModelConfig,
    ModelParams, StepAttention, TrainConfig, TrainOutcome, Variant,
};
use sentinel_core::dataset::{
    build_vocab, generate_corpus, read_corpus, read_vocab, split, truncate, write_corpus, Corpus, CorpusConfig,
    Inventory, SceneInstance, Vocabulary, END, UNK,
};
use sentinel_core::encoder::{encode_scene, EncoderConfig, RawLayout};
use sentinel_core::metrics::{bleu, BleuReport};
use sentinel_core::Error;

use crate::config::Settings;
use crate::{CliError, CliResult};

pub const TRAIN_FILE: &str = "train.jsonl";
pub const VAL_FILE: &str = "val.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const VOCAB_FILE: &str = "vocab.csv";
pub const MAPS_DIR: &str = "maps";

pub const BLEU_FORMAT: &str = "# sentinel-bleu v1";
pub const CAPTIONS_FORMAT: &str = "# sentinel-captions v1";
pub const GROUNDING_FORMAT: &str = "# sentinel-grounding v1";
pub const LOCALIZATION_FORMAT: &str = "# sentinel-localization v1";
pub const ENTROPY_FORMAT: &str = "# sentinel-entropy v1";
pub const COMPARISON_FORMAT: &str = "# sentinel-comparison v1";

/// Files produced by one command, written only after all of them are ready.
struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    fn new() -> Self {
        Outputs { files: Vec::new() }
    }

    fn add(&mut self, path: PathBuf, bytes: impl Into<Vec<u8>>) {
        self.files.push((path, bytes.into()));
    }

    fn write(self, force: bool) -> CliResult<Vec<PathBuf>> {
        refuse_existing(self.files.iter().map(|(p, _)| p.as_path()), force)?;
        let mut written = Vec::with_capacity(self.files.len());
        for (path, bytes) in self.files {
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
            }
            std::fs::write(&path, bytes).map_err(|e| io_error(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }
}

fn refuse_existing<'a>(paths: impl IntoIterator<Item = &'a Path>, force: bool) -> CliResult<()> {
    if force {
        return Ok(());
    }
    match paths.into_iter().find(|p| p.exists()) {
        Some(p) => Err(CliError::Config(format!("{} exists; pass --force to overwrite", p.display()))),
        None => Ok(()),
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Run a core reader, naming the file in I/O failures.
fn read_file<T>(path: &Path, read: impl FnOnce(&Path) -> sentinel_core::Result<T>) -> CliResult<T> {
    read(path).map_err(|e| match e {
        Error::Io(io) => io_error(path, io),
        other => CliError::Core(other),
    })
}

fn out_dir(global: &Settings) -> PathBuf {
    PathBuf::from(global.raw("out"))
}

fn data_dir(global: &Settings, s: &Settings) -> PathBuf {
    s.optional("data").map_or_else(|| out_dir(global), PathBuf::from)
}

fn load_split(dir: &Path, name: &str) -> CliResult<Corpus> {
    read_file(&dir.join(name), read_corpus)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitStats {
    pub name: &'static str,
    pub scenes: usize,
    pub tokens: usize,
    pub unk: usize,
}

impl SplitStats {
    pub fn unk_rate(&self) -> f64 {
        if self.tokens == 0 {
            0.0
        } else {
            self.unk as f64 / self.tokens as f64
        }
    }
}

#[derive(Clone, Debug)]
pub struct GenSummary {
    pub splits: Vec<SplitStats>,
    pub vocab: Vocabulary,
    pub written: Vec<PathBuf>,
}

fn split_stats(name: &'static str, scenes: &[SceneInstance], vocab: &Vocabulary, max_len: usize) -> SplitStats {
    let mut stats = SplitStats { name, scenes: scenes.len(), tokens: 0, unk: 0 };
    for r in scenes.iter().flat_map(|s| &s.references) {
        for &id in vocab.encode(r, max_len).iter().filter(|&&id| !Vocabulary::is_reserved(id) || id == UNK) {
            stats.tokens += 1;
            stats.unk += usize::from(id == UNK);
        }
    }
    stats
}

pub fn gen(global: &Settings, s: &Settings, force: bool) -> CliResult<GenSummary> {
    let seed: u64 = global.get("seed")?;
    let counts: [usize; 3] = [s.get("train_scenes")?, s.get("val_scenes")?, s.get("test_scenes")?];
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(CliError::Config("the corpus needs at least one scene".into()));
    }
    let max_len: usize = s.get("max_caption_len")?;
    let cfg = CorpusConfig {
        seed,
        n_scenes: total,
        grid: s.get("grid")?,
        canvas: s.get("canvas")?,
        min_objects: s.get("min_objects")?,
        max_objects: s.get("max_objects")?,
    };
    let dir = out_dir(global);
    let paths: Vec<PathBuf> = [TRAIN_FILE, VAL_FILE, TEST_FILE, VOCAB_FILE].iter().map(|n| dir.join(n)).collect();
    refuse_existing(paths.iter().map(PathBuf::as_path), force)?;

    let inventory = Inventory::default();
    let corpus = generate_corpus(&cfg, &inventory)?;
    let fractions = counts.map(|c| c as f64 / total as f64);
    let splits = split(corpus.scenes, fractions, seed)?;
    let vocab = build_vocab(
        splits.train.iter().flat_map(|sc| sc.references.iter().map(|r| truncate(r, max_len))),
        s.get("min_count")?,
    )?;

    let mut out = Outputs::new();
    let parts = [
        ("train", TRAIN_FILE, &splits.train),
        ("val", VAL_FILE, &splits.val),
        ("test", TEST_FILE, &splits.test),
    ];
    let mut stats = Vec::new();
    for (name, file, scenes) in parts {
        let mut bytes = Vec::new();
        write_corpus(&mut bytes, cfg.grid, cfg.canvas, &inventory, scenes)?;
        out.add(dir.join(file), bytes);
        stats.push(split_stats(name, scenes, &vocab, max_len));
    }
    out.add(dir.join(VOCAB_FILE), vocab.to_csv());
    let written = out.write(force)?;

    for st in &stats {
        println!("{:<5} {:>5} scenes  {:>6} tokens  unk rate {:.4}", st.name, st.scenes, st.tokens, st.unk_rate());
    }
    println!("vocabulary {} tokens (min count {})", vocab.len(), vocab.min_count());
    Ok(GenSummary { splits: stats, vocab, written })
}

pub fn checkpoint_path(dir: &Path, variant: Variant) -> PathBuf {
    dir.join(format!("{variant}.ckpt"))
}

pub fn train_log_path(dir: &Path, variant: Variant) -> PathBuf {
    dir.join(format!("{variant}.log.csv"))
}

pub fn train(global: &Settings, s: &Settings, force: bool, on_epoch: impl FnMut(&EpochLog)) -> CliResult<TrainOutcome> {
    let seed: u64 = global.get("seed")?;
    let variant: Variant = s.get("model")?;
    let dir = out_dir(global);
    let ckpt_path = checkpoint_path(&dir, variant);
    let log_path = train_log_path(&dir, variant);
    refuse_existing([ckpt_path.as_path(), log_path.as_path()], force)?;

    let data = data_dir(global, s);
    let train_set = load_split(&data, TRAIN_FILE)?;
    let val_set = load_split(&data, VAL_FILE)?;
    let vocab = read_file(&data.join(VOCAB_FILE), read_vocab)?;
    let inventory = &train_set.inventory;

    let mut config = ModelConfig::new(variant, vocab.len(), train_set.grid * train_set.grid, RawLayout::new(inventory).d_raw());
    config.d = s.get("d")?;
    config.d_embed = s.get("d_embed")?;
    config.hidden = s.get("hidden")?;
    let cfg = TrainConfig {
        optimizer: AdamConfig {
            learning_rate: s.get("learning_rate")?,
            beta1: s.get("beta1")?,
            beta2: s.get("beta2")?,
            epsilon: s.get("epsilon")?,
        },
        batch_size: s.get("batch_size")?,
        max_epochs: s.get("max_epochs")?,
        patience: s.get("patience")?,
        seed,
        val_beam: s.get("val_beam")?,
        max_caption_len: s.get("max_caption_len")?,
    };
    let init = ModelParams::init(config, seed)?;
    let outcome = sentinel_core::captioner::train(
        init,
        &train_set.scenes,
        &val_set.scenes,
        &vocab,
        inventory,
        &EncoderConfig::default(),
        &cfg,
        on_epoch,
    )?;

    let ckpt = Checkpoint {
        params: outcome.params.clone(),
        vocab_digest: vocab.digest(),
    };
    let mut out = Outputs::new();
    out.add(ckpt_path, ckpt.to_text());
    out.add(log_path, format_log(&outcome.log));
    out.write(force)?;
    Ok(outcome)
}

#[derive(Clone, Debug)]
pub struct Decoded {
    pub captions: Vec<Vec<String>>,
    pub traces: TraceSet,
}

/// Decode every scene, keeping one trace record per emitted token.
pub fn decode_scenes(
    params: &ModelParams,
    corpus: &Corpus,
    vocab: &Vocabulary,
    beam: Option<usize>,
    max_caption_len: usize,
) -> CliResult<Decoded> {
    let encoder = EncoderConfig::default();
    let mut captions = Vec::with_capacity(corpus.scenes.len());
    let mut records = Vec::new();
    for scene in &corpus.scenes {
        let raw = encode_scene(scene, &corpus.inventory, &encoder);
        let hyp: Hypothesis<StepAttention> = match beam {
            Some(b) => decode_beam(params, &raw, b, max_caption_len + 1)?
                .into_iter()
                .next()
                .expect("beam search returns at least one hypothesis"),
            None => decode_greedy(params, &raw, max_caption_len + 1)?,
        };
        for (step, (&tok, att)) in hyp.tokens.iter().zip(&hyp.attention).enumerate() {
            records.push(TraceRecord {
                scene: scene.id,
                step,
                token: vocab.token(tok).to_string(),
                beta: att.beta,
                alpha_hat: att.alpha_hat.clone(),
            });
        }
        captions.push(hyp.content(END).iter().map(|&t| vocab.token(t).to_string()).collect());
    }
    Ok(Decoded {
        captions,
        traces: TraceSet {
            header: TraceHeader::new(params.config.variant, corpus.grid, corpus.canvas),
            records,
        },
    })
}

pub fn bleu_report(corpus: &Corpus, captions: &[Vec<String>], max_caption_len: usize) -> CliResult<BleuReport> {
    let refs: Vec<Vec<Vec<String>>> = corpus
        .scenes
        .iter()
        .map(|s| s.references.iter().map(|r| truncate(r, max_caption_len).to_vec()).collect())
        .collect();
    Ok(bleu(captions, &refs, 4)?)
}

fn format_bleu(r: &BleuReport) -> String {
    let mut out = format!("{BLEU_FORMAT}\n");
    for n in 1..=4 {
        let _ = writeln!(out, "bleu_{n} {}", r.bleu(n));
    }
    let _ = writeln!(out, "brevity_penalty {}", r.brevity_penalty);
    let _ = writeln!(out, "candidate_length {}", r.candidate_length);
    let _ = writeln!(out, "reference_length {}", r.reference_length);
    out
}

fn format_captions(corpus: &Corpus, captions: &[Vec<String>]) -> String {
    let mut out = format!("{CAPTIONS_FORMAT}\n");
    for (s, c) in corpus.scenes.iter().zip(captions) {
        let _ = writeln!(out, "{}\t{}", s.id, c.join(" "));
    }
    out
}

fn trace_bytes(t: &TraceSet) -> CliResult<Vec<u8>> {
    let mut bytes = Vec::new();
    write_traces(&mut bytes, t)?;
    Ok(bytes)
}

pub fn trace_path(dir: &Path, variant: Variant, split: &str) -> PathBuf {
    dir.join(format!("{variant}.{split}.trace.jsonl"))
}

#[derive(Clone, Debug)]
pub struct EvalSummary {
    pub variant: Variant,
    pub bleu: BleuReport,
    pub test: Decoded,
    pub written: Vec<PathBuf>,
}

pub fn eval(global: &Settings, s: &Settings, force: bool) -> CliResult<EvalSummary> {
    let dir = out_dir(global);
    let data = data_dir(global, s);
    let ckpt_path = match s.optional("checkpoint") {
        Some(p) => PathBuf::from(p),
        None => checkpoint_path(&dir, s.get("model")?),
    };
    let max_len: usize = s.get("max_caption_len")?;
    let beam = if s.get::<bool>("greedy")? {
        None
    } else {
        match s.get::<usize>("beam")? {
            0 => return Err(CliError::Config("beam must be at least 1".into())),
            b => Some(b),
        }
    };

    let ckpt = read_file(&ckpt_path, read_checkpoint)?;
    let vocab_path = data.join(VOCAB_FILE);
    let vocab = read_file(&vocab_path, read_vocab)?;
    if ckpt.vocab_digest != vocab.digest() {
        return Err(CliError::Core(Error::Format(format!(
            "{} was trained with a different vocabulary than {}",
            ckpt_path.display(),
            vocab_path.display()
        ))));
    }
    let variant = ckpt.params.config.variant;
    let outputs = [
        dir.join(format!("{variant}.bleu.txt")),
        dir.join(format!("{variant}.test.captions.txt")),
        dir.join(format!("{variant}.val.captions.txt")),
        trace_path(&dir, variant, "test"),
        trace_path(&dir, variant, "val"),
    ];
    refuse_existing(outputs.iter().map(PathBuf::as_path), force)?;

    let test_set = load_split(&data, TEST_FILE)?;
    let val_set = load_split(&data, VAL_FILE)?;
    let test = decode_scenes(&ckpt.params, &test_set, &vocab, beam, max_len)?;
    let val = decode_scenes(&ckpt.params, &val_set, &vocab, beam, max_len)?;
    let report = bleu_report(&test_set, &test.captions, max_len)?;

    let [bleu_path, test_caps, val_caps, test_tr, val_tr] = outputs;
    let mut out = Outputs::new();
    out.add(bleu_path, format_bleu(&report));
    out.add(test_caps, format_captions(&test_set, &test.captions));
    out.add(val_caps, format_captions(&val_set, &val.captions));
    out.add(test_tr, trace_bytes(&test.traces)?);
    out.add(val_tr, trace_bytes(&val.traces)?);
    let written = out.write(force)?;
    println!(
        "{variant}: bleu-1 {:.4}  bleu-2 {:.4}  bleu-3 {:.4}  bleu-4 {:.4}",
        report.bleu(1),
        report.bleu(2),
        report.bleu(3),
        report.bleu(4)
    );
    Ok(EvalSummary { variant, bleu: report, test, written })
}

/// Localization of one trace set with thresholds chosen on its validation traces.
#[derive(Clone, Debug)]
pub struct Localization {
    pub variant: Variant,
    pub report: LocalizationReport,
    pub baseline: LocalizationReport,
}

fn localization(test: &TraceSet, val: &TraceSet, test_set: &Corpus, val_set: &Corpus) -> CliResult<Localization> {
    let inventory = &test_set.inventory;
    let thresholds = estimate_thresholds(&align(val, &val_set.scenes, inventory)?, inventory);
    let aligned = align(test, &test_set.scenes, inventory)?;
    Ok(Localization {
        variant: test.header.variant,
        report: localization_accuracy(&aligned, inventory, &thresholds),
        baseline: uniform_baseline(&aligned, inventory),
    })
}

/// Validation traces written next to `test`: `x.test.trace.jsonl` → `x.val.trace.jsonl`.
pub fn sibling_val_traces(test: &Path) -> Option<PathBuf> {
    let name = test.file_name()?.to_str()?;
    let stem = name.strip_suffix(".test.trace.jsonl")?;
    Some(test.with_file_name(format!("{stem}.val.trace.jsonl")))
}

fn val_path_for(s: &Settings, key: &str, test: &Path) -> CliResult<PathBuf> {
    match s.optional(key) {
        Some(p) => Ok(PathBuf::from(p)),
        None => sibling_val_traces(test).ok_or_else(|| {
            CliError::Config(format!("cannot derive validation traces from {}; set {key}", test.display()))
        }),
    }
}

#[derive(Clone, Debug)]
pub struct AnalyzeSummary {
    pub grounding: Vec<GroundingRow>,
    /// Visual-word minus function-word grounding, when both occur.
    pub separation: Option<f64>,
    pub entropy: Vec<EntropyRow>,
    pub primary: Localization,
    pub comparison: Option<Localization>,
    pub written: Vec<PathBuf>,
}

fn format_localization(l: &Localization) -> String {
    let mut out = format!("{LOCALIZATION_FORMAT}\ncategory,count,mean_iou,threshold,uniform_iou\n");
    for (c, b) in l.report.per_category.iter().zip(&l.baseline.per_category) {
        let _ = writeln!(out, "{},{},{},{},{}", c.category, c.count, c.mean_iou, c.threshold, b.mean_iou);
    }
    let _ = writeln!(out, "all,{},{},,{}", l.report.aligned, l.report.mean_iou, l.baseline.mean_iou);
    out
}

fn map_name(variant: Variant, scene: u64, step: usize, token: &str) -> String {
    let word: String = token.chars().filter(char::is_ascii_alphanumeric).collect();
    format!("{variant}_scene{scene}_step{step:02}_{word}.pgm")
}

pub fn analyze(global: &Settings, s: &Settings, force: bool) -> CliResult<AnalyzeSummary> {
    let dir = out_dir(global);
    let data = data_dir(global, s);
    let maps: usize = s.get("maps")?;
    let test_path = s
        .optional("traces")
        .map_or_else(|| trace_path(&dir, Variant::Adaptive, "test"), PathBuf::from);
    let val_path = val_path_for(s, "val_traces", &test_path)?;
    let compare = match s.optional("compare") {
        Some(p) => {
            let p = PathBuf::from(p);
            let v = val_path_for(s, "compare_val", &p)?;
            Some((p, v))
        }
        None => None,
    };

    let test = read_file(&test_path, read_traces)?;
    let val = read_file(&val_path, read_traces)?;
    let test_set = load_split(&data, TEST_FILE)?;
    let val_set = load_split(&data, VAL_FILE)?;
    let variant = test.header.variant;

    let grounding = grounding_table(&test.records)?;
    let separation = grounding_separation(&grounding, &test_set.inventory);
    let entropy = attention_entropy_report(&test, None);
    let primary = localization(&test, &val, &test_set, &val_set)?;
    let comparison = match &compare {
        Some((t, v)) => {
            let t = read_file(t, read_traces)?;
            let v = read_file(v, read_traces)?;
            Some(localization(&t, &v, &test_set, &val_set)?)
        }
        None => None,
    };

    let mut out = Outputs::new();
    let mut g = format!("{GROUNDING_FORMAT}\ntoken,count,probability\n");
    for r in &grounding {
        let _ = writeln!(g, "{},{},{}", r.token, r.count, r.probability);
    }
    out.add(dir.join(format!("{variant}.grounding.csv")), g);
    out.add(dir.join(format!("{variant}.localization.csv")), format_localization(&primary));
    let mut e = format!("{ENTROPY_FORMAT}\ntoken,count,mean_entropy\n");
    for r in &entropy {
        let _ = writeln!(e, "{},{},{}", r.token, r.count, r.mean_entropy);
    }
    out.add(dir.join(format!("{variant}.entropy.csv")), e);
    if let Some(other) = &comparison {
        let mut c = format!("{COMPARISON_FORMAT}\nvariant,mean_iou,uniform_iou\n");
        for l in [&primary, other] {
            let _ = writeln!(c, "{},{},{}", l.variant, l.report.mean_iou, l.baseline.mean_iou);
        }
        out.add(dir.join("comparison.csv"), c);
    }
    let (grid, canvas) = (test.header.grid, test.header.canvas);
    for (scene, steps) in test.captions().into_iter().take(maps) {
        for r in steps {
            let map = upsample_bilinear(&spatial_map(&r.alpha_hat, grid * grid), grid, canvas)?;
            let mut bytes = Vec::new();
            write_pgm(&mut bytes, &map, canvas)?;
            out.add(dir.join(MAPS_DIR).join(map_name(variant, scene, r.step, &r.token)), bytes);
        }
    }
    let written = out.write(force)?;

    if let Some(sep) = separation {
        println!("{variant}: grounding separation {sep:.4}");
    }
    for l in std::iter::once(&primary).chain(&comparison) {
        println!(
            "{}: mean localization iou {:.4} (uniform {:.4}, {} aligned)",
            l.variant, l.report.mean_iou, l.baseline.mean_iou, l.report.aligned
        );
    }
    Ok(AnalyzeSummary { grounding, separation, entropy, primary, comparison, written })
}
