//! Config-driven experiment grids: dataset construction, training per
//! cell and seed, scoring, CSV tables, per-run JSONL and a manifest that
//! reproduces every table byte for byte.

mod backdoor;
mod config;
mod outlier;
mod presets;
mod sequence;
mod table;
mod uaerm;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{load_idx, synthetic_digits, synthetic_letters, ImageDataset, SequenceCorpus, SyntheticSplit};
use crate::dp::{TrainReport, TrainStatus};
use crate::error::{Error, Result};
use crate::nn::save_checkpoint;

pub use config::{
    BackdoorSpec, CorpusSource, ExperimentConfig, ExperimentSpec, ImageSource, OutlierSpec, SequenceSpec, TrainingSpec,
    UaermSpec,
};
pub use table::{Row, RunRecord, RunStatus, Table};
pub use uaerm::spearman;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RUNS_FILE: &str = "runs.jsonl";
const MANIFEST_VERSION: u32 = 1;

/// Everything an experiment produced, before it is written out.
#[derive(Debug, Clone, Default)]
pub struct ExperimentOutcome {
    /// `(file name, table)` pairs, written as CSV.
    pub tables: Vec<(String, Table)>,
    pub runs: Vec<RunRecord>,
    pub failures: Vec<String>,
    pub data_hashes: BTreeMap<String, String>,
}

impl ExperimentOutcome {
    pub fn table(&self, file: &str) -> Option<&Table> {
        self.tables.iter().find(|(f, _)| f == file).map(|(_, t)| t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub versions: BTreeMap<String, String>,
    pub data_hashes: BTreeMap<String, String>,
    /// SHA-256 of every CSV written, keyed by file name.
    pub outputs: BTreeMap<String, String>,
    pub failures: Vec<String>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn hash_images(ds: &ImageDataset) -> String {
    let mut h = Sha256::new();
    h.update((ds.rows as u64).to_le_bytes());
    h.update((ds.cols as u64).to_le_bytes());
    h.update(&ds.images);
    h.update(&ds.labels);
    for f in &ds.flags {
        h.update([*f as u8]);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn hash_corpus(c: &SequenceCorpus) -> String {
    let mut h = Sha256::new();
    for (s, l) in c.sessions.iter().zip(&c.labels) {
        for t in s {
            h.update((*t as u32).to_le_bytes());
        }
        h.update([0xff, *l as u8]);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Train/test pools for an image source. `letters` selects the synthetic
/// letter generator instead of digits.
pub(crate) fn load_pools(src: &ImageSource, letters: bool) -> Result<(ImageDataset, ImageDataset)> {
    match src {
        ImageSource::Synthetic { train_pool, test_pool, seed } => {
            let gen = if letters { synthetic_letters } else { synthetic_digits };
            Ok((gen(*train_pool, SyntheticSplit::Train, *seed), gen(*test_pool, SyntheticSplit::Test, *seed)))
        }
        ImageSource::Idx { train_images, train_labels, test_images, test_labels } => {
            let mut train = load_idx(train_images, train_labels)?;
            let mut test = load_idx(test_images, test_labels)?;
            // Keep ids of the two files disjoint.
            test.ids.iter_mut().for_each(|id| *id |= 1 << 62);
            train.meta.sources = vec![train_images.display().to_string()];
            test.meta.sources = vec![test_images.display().to_string()];
            Ok((train, test))
        }
    }
}

pub(crate) fn sigma_label(sigma: Option<f64>) -> String {
    sigma.map_or_else(|| "none".to_string(), |s| format!("{s}"))
}

/// The always-present control arms followed by the configured noise scales,
/// without duplicates.
pub(crate) fn sigma_grid(controls: &[Option<f64>], sigmas: &[f64]) -> Vec<Option<f64>> {
    let mut out: Vec<Option<f64>> = controls.to_vec();
    for &s in sigmas {
        if !out.contains(&Some(s)) {
            out.push(Some(s));
        }
    }
    out
}

pub(crate) type Metrics = BTreeMap<String, Option<f64>>;

/// Bookkeeping shared by the experiment runners.
pub(crate) struct Ctx<'a> {
    pub cfg: &'a ExperimentConfig,
    pub ckpt_dir: Option<PathBuf>,
    pub out: ExperimentOutcome,
}

impl<'a> Ctx<'a> {
    fn new(cfg: &'a ExperimentConfig, out_dir: Option<&Path>) -> Self {
        let ckpt_dir = match (cfg.save_checkpoints, out_dir) {
            (true, Some(d)) => Some(d.join("checkpoints")),
            _ => None,
        };
        Self { cfg, ckpt_dir, out: ExperimentOutcome::default() }
    }

    pub fn hash(&mut self, label: String, digest: String) {
        self.out.data_hashes.insert(label, digest);
    }

    /// Runs one training cell. Errors are recorded, not propagated, so the
    /// grid continues.
    pub fn cell<F>(&mut self, config_id: &str, seed: u64, body: F) -> (RunStatus, Option<f64>, Metrics)
    where
        F: FnOnce() -> Result<(TrainReport, Metrics)>,
    {
        let start = Instant::now();
        let (status, epsilon, metrics, losses, checkpoint) = match body() {
            Ok((report, metrics)) => {
                let status = match report.status {
                    TrainStatus::Completed => RunStatus::Ok,
                    TrainStatus::Diverged { epoch, step } => RunStatus::Diverged { epoch, step },
                };
                let mut checkpoint = None;
                if let Some(dir) = &self.ckpt_dir {
                    let name = format!("{}-seed{seed}.ckpt", config_id.replace(['/', '=', ','], "_"));
                    let saved = fs::create_dir_all(dir)
                        .map_err(Error::from)
                        .and_then(|_| save_checkpoint(&report.model, dir.join(&name)));
                    match saved {
                        Ok(()) => checkpoint = Some(format!("checkpoints/{name}")),
                        Err(e) => {
                            self.out.failures.push(format!("{config_id} seed {seed}: checkpoint not written: {e}"))
                        }
                    }
                }
                let losses = report.epochs.iter().map(|e| e.mean_loss).collect();
                (status, report.epsilon, metrics, losses, checkpoint)
            }
            Err(e) => {
                self.out.failures.push(format!("{config_id} seed {seed}: {e}"));
                (RunStatus::Error { message: e.to_string() }, None, Metrics::new(), Vec::new(), None)
            }
        };
        self.out.runs.push(RunRecord {
            experiment: self.cfg.experiment.kind().to_string(),
            config_id: config_id.to_string(),
            seed,
            status: status.clone(),
            epsilon,
            metrics: metrics.clone(),
            epoch_losses: losses,
            checkpoint,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
        (status, epsilon, metrics)
    }
}

/// Runs the experiment in memory. `out_dir` is only used for checkpoints.
pub fn execute(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let mut ctx = Ctx::new(cfg, out_dir);
    match &cfg.experiment {
        ExperimentSpec::Outlier(s) => outlier::run(&mut ctx, s)?,
        ExperimentSpec::Sequence(s) => sequence::run(&mut ctx, s)?,
        ExperimentSpec::Backdoor(s) => backdoor::run(&mut ctx, s)?,
        ExperimentSpec::Uaerm(s) => uaerm::run(&mut ctx, s)?,
    }
    Ok(ctx.out)
}

/// Runs the experiment and writes its CSV tables, `runs.jsonl`,
/// `config.toml` and `manifest.json` into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<(Manifest, ExperimentOutcome)> {
    fs::create_dir_all(out_dir)?;
    let outcome = execute(cfg, Some(out_dir))?;
    let mut outputs = BTreeMap::new();
    for (file, table) in &outcome.tables {
        let csv = table.to_csv();
        fs::write(out_dir.join(file), &csv)?;
        outputs.insert(file.clone(), sha256_hex(csv.as_bytes()));
    }
    let mut jsonl = String::new();
    for r in &outcome.runs {
        jsonl.push_str(&serde_json::to_string(r)?);
        jsonl.push('\n');
    }
    fs::write(out_dir.join(RUNS_FILE), jsonl)?;
    fs::write(out_dir.join("config.toml"), cfg.to_toml())?;
    let versions = BTreeMap::from([
        ("dpad-core".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("checkpoint-format".to_string(), "1".to_string()),
    ]);
    let manifest = Manifest {
        manifest_version: MANIFEST_VERSION,
        config: cfg.clone(),
        seeds: cfg.seeds.clone(),
        versions,
        data_hashes: outcome.data_hashes.clone(),
        outputs,
        failures: outcome.failures.clone(),
    };
    fs::write(out_dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok((manifest, outcome))
}

/// Differences between a recorded manifest and a rerun.
pub fn compare_manifests(recorded: &Manifest, rerun: &Manifest) -> Vec<String> {
    let mut diffs = Vec::new();
    for (label, map_a, map_b) in
        [("data", &recorded.data_hashes, &rerun.data_hashes), ("output", &recorded.outputs, &rerun.outputs)]
    {
        for (k, v) in map_a {
            match map_b.get(k) {
                Some(w) if w == v => {}
                Some(_) => diffs.push(format!("{label} {k} differs")),
                None => diffs.push(format!("{label} {k} missing from rerun")),
            }
        }
        for k in map_b.keys().filter(|k| !map_a.contains_key(*k)) {
            diffs.push(format!("{label} {k} not in recorded manifest"));
        }
    }
    diffs
}

/// Reruns the configuration stored in a manifest and checks every hash.
pub fn rerun_manifest(manifest_path: &Path, out_dir: &Path) -> Result<(Manifest, Vec<String>)> {
    let recorded = Manifest::load(manifest_path)?;
    let (rerun, _) = run_experiment(&recorded.config, out_dir)?;
    let diffs = compare_manifests(&recorded, &rerun);
    Ok((rerun, diffs))
}

pub use presets::{desk_backdoor, desk_outlier, desk_sequence, desk_uaerm};
