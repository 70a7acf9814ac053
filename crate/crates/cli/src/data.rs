use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use dpad_core::data::{
    build_nd_test, build_outlier_mix, gen_sessions, load_idx, load_sequences, poison, synthetic_digits,
    synthetic_letters, write_idx, write_sequences, DatasetMeta, ImageDataset, PoisonSpec, Provenance, SequenceCorpus,
    SyntheticLogModel, SyntheticSplit,
};

pub const INDEX_FILE: &str = "dataset.json";
const IMAGES_FILE: &str = "images.idx";
const LABELS_FILE: &str = "labels.idx";
const SESSIONS_FILE: &str = "sessions.txt";
const SESSION_LABELS_FILE: &str = "session-labels.txt";

/// Sidecar written next to the data files: what IDX cannot carry.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum DatasetIndex {
    Images { ids: Vec<u64>, flags: Vec<Provenance>, meta: DatasetMeta },
    Sequences { vocab: usize, source: String },
}

pub enum Loaded {
    Images(ImageDataset),
    Sequences(SequenceCorpus),
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Directory written by `dataset build`.
    #[arg(long, conflicts_with_all = ["images", "sessions"])]
    pub data: Option<PathBuf>,
    /// IDX image file (with --labels).
    #[arg(long, requires = "labels")]
    pub images: Option<PathBuf>,
    #[arg(long, requires = "images")]
    pub labels: Option<PathBuf>,
    /// Session file, one space-separated token line per session (with --vocab).
    #[arg(long, requires = "vocab", conflicts_with = "images")]
    pub sessions: Option<PathBuf>,
    /// Optional `normal`/`abnormal` line per session.
    #[arg(long, requires = "sessions")]
    pub session_labels: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<usize>,
}

impl DataArgs {
    pub fn load(&self) -> Result<Loaded> {
        if let Some(dir) = &self.data {
            return load_dir(dir);
        }
        if let (Some(images), Some(labels)) = (&self.images, &self.labels) {
            return Ok(Loaded::Images(load_idx(images, labels)?));
        }
        if let (Some(sessions), Some(vocab)) = (&self.sessions, self.vocab) {
            return Ok(Loaded::Sequences(load_sequences(sessions, self.session_labels.as_deref(), vocab)?));
        }
        bail!("no input data: pass --data, --images/--labels or --sessions/--vocab")
    }
}

fn load_dir(dir: &Path) -> Result<Loaded> {
    let index_path = dir.join(INDEX_FILE);
    let text = fs::read_to_string(&index_path).with_context(|| format!("reading {}", index_path.display()))?;
    let index: DatasetIndex =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", index_path.display()))?;
    match index {
        DatasetIndex::Images { ids, flags, meta } => {
            let mut ds = load_idx(&dir.join(IMAGES_FILE), &dir.join(LABELS_FILE))?;
            if ids.len() != ds.len() || flags.len() != ds.len() {
                bail!("{} lists {} ids for {} images", index_path.display(), ids.len(), ds.len());
            }
            ds.ids = ids;
            ds.flags = flags;
            ds.meta = meta;
            Ok(Loaded::Images(ds))
        }
        DatasetIndex::Sequences { vocab, source } => {
            let mut corpus = load_sequences(&dir.join(SESSIONS_FILE), Some(&dir.join(SESSION_LABELS_FILE)), vocab)?;
            corpus.source = source;
            Ok(Loaded::Sequences(corpus))
        }
    }
}

pub fn save_images(ds: &ImageDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_idx(ds, &dir.join(IMAGES_FILE), &dir.join(LABELS_FILE))?;
    let index = DatasetIndex::Images { ids: ds.ids.clone(), flags: ds.flags.clone(), meta: ds.meta.clone() };
    fs::write(dir.join(INDEX_FILE), serde_json::to_string(&index)? + "\n")?;
    Ok(())
}

pub fn save_sequences(corpus: &SequenceCorpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_sequences(corpus, &dir.join(SESSIONS_FILE), &dir.join(SESSION_LABELS_FILE))?;
    let index = DatasetIndex::Sequences { vocab: corpus.vocab, source: corpus.source.clone() };
    fs::write(dir.join(INDEX_FILE), serde_json::to_string(&index)? + "\n")?;
    Ok(())
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    /// Synthetic handwritten-style digits.
    Digits,
    /// Synthetic letters A-J, the outlier and novelty source.
    Letters,
    /// Digits with a fraction of letters mixed in.
    OutlierMix,
    /// Digits and letters in equal parts, letters flagged as novel.
    NoveltyTest,
    /// Digits with a fraction carrying the backdoor trigger.
    Poisoned,
    /// Synthetic workflow-log sessions.
    Sequences,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Args, Debug)]
pub struct BuildArgs {
    #[arg(long, value_enum)]
    pub kind: DatasetKind,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of images (total for mixes, per half for novelty tests).
    #[arg(long, default_value_t = 6000)]
    pub count: usize,
    /// Outlier or poisoning ratio.
    #[arg(long, default_value_t = 0.05)]
    pub ratio: f64,
    #[arg(long, value_enum, default_value_t = Split::Train)]
    pub split: Split,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 29)]
    pub vocab: usize,
    #[arg(long, default_value_t = 2000)]
    pub normal: usize,
    #[arg(long, default_value_t = 200)]
    pub abnormal: usize,
    /// Seed of the workflow automaton behind synthetic sessions.
    #[arg(long, default_value_t = 1)]
    pub automaton_seed: u64,
}

pub fn build(args: &BuildArgs) -> Result<serde_json::Value> {
    let split = match args.split {
        Split::Train => SyntheticSplit::Train,
        Split::Test => SyntheticSplit::Test,
    };
    let images = match args.kind {
        DatasetKind::Digits => synthetic_digits(args.count, split, args.seed),
        DatasetKind::Letters => synthetic_letters(args.count, split, args.seed),
        DatasetKind::OutlierMix => {
            let normal = synthetic_digits(args.count, split, args.seed);
            let outliers = synthetic_letters(args.count, split, args.seed);
            build_outlier_mix(&normal, &outliers, args.ratio, args.count, args.seed)?
        }
        DatasetKind::NoveltyTest => {
            let normal = synthetic_digits(args.count, SyntheticSplit::Test, args.seed);
            let novel = synthetic_letters(args.count, SyntheticSplit::Test, args.seed);
            build_nd_test(&normal, &novel, None)?
        }
        DatasetKind::Poisoned => {
            poison(&synthetic_digits(args.count, split, args.seed), args.ratio, &PoisonSpec::default(), args.seed)?
        }
        DatasetKind::Sequences => {
            let model = SyntheticLogModel::generate(args.vocab, args.automaton_seed)?;
            let corpus = gen_sessions(&model, args.normal, args.abnormal, args.seed)?;
            save_sequences(&corpus, &args.out)?;
            return Ok(serde_json::json!({
                "kind": "sequences",
                "out": args.out,
                "sessions": corpus.len(),
                "abnormal": corpus.count(dpad_core::data::SessionLabel::Abnormal),
                "vocab": corpus.vocab,
            }));
        }
    };
    save_images(&images, &args.out)?;
    Ok(serde_json::json!({
        "kind": "images",
        "out": args.out,
        "images": images.len(),
        "outliers": images.count(Provenance::Outlier),
        "poisoned": images.count(Provenance::Poisoned),
    }))
}
