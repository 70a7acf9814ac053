use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{PoisonSpec, WindowMode};
use crate::dp::{DpConfig, SamplingMode};
use crate::error::{Error, Result};
use crate::nn::ModelArch;

/// A complete, seeded experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Write a checkpoint per trained model under `checkpoints/`.
    #[serde(default)]
    pub save_checkpoints: bool,
    pub experiment: ExperimentSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ExperimentSpec {
    Outlier(OutlierSpec),
    Sequence(SequenceSpec),
    Backdoor(BackdoorSpec),
    Uaerm(UaermSpec),
}

impl ExperimentSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ExperimentSpec::Outlier(_) => "outlier",
            ExperimentSpec::Sequence(_) => "sequence",
            ExperimentSpec::Backdoor(_) => "backdoor",
            ExperimentSpec::Uaerm(_) => "uaerm",
        }
    }
}

/// Where images come from. Synthetic pools are drawn with `seed`; IDX
/// sources name the four files of a train/test pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum ImageSource {
    Synthetic {
        #[serde(default = "default_pool")]
        train_pool: usize,
        #[serde(default = "default_test_pool")]
        test_pool: usize,
        #[serde(default)]
        seed: u64,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

fn default_pool() -> usize {
    12_000
}

fn default_test_pool() -> usize {
    1000
}

impl ImageSource {
    pub fn synthetic(seed: u64) -> Self {
        ImageSource::Synthetic { train_pool: default_pool(), test_pool: default_test_pool(), seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSpec {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Clipping bound for every private cell.
    #[serde(default = "default_clip")]
    pub clip: f64,
    #[serde(default)]
    pub sampling: SamplingMode,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_clip() -> f64 {
    1.0
}

fn default_delta() -> f64 {
    1e-5
}

impl TrainingSpec {
    pub fn dp_config(&self, clip: Option<f64>, sigma: Option<f64>, seed: u64) -> DpConfig {
        DpConfig {
            clip,
            sigma,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed,
            sampling: self.sampling,
            delta: self.delta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutlierSpec {
    pub normal: ImageSource,
    pub outliers: ImageSource,
    pub train_size: usize,
    pub outlier_ratios: Vec<f64>,
    /// Normal and novel image counts in the novelty test set.
    pub nd_normal: usize,
    pub nd_novel: usize,
    pub model: ModelArch,
    pub training: TrainingSpec,
    /// Noise scales; the non-private baseline and `sigma = 0` are always run.
    pub sigmas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum CorpusSource {
    Synthetic { vocab: usize, n_normal: usize, n_abnormal: usize, automaton_seed: u64 },
    Files { vocab: usize, sessions: PathBuf, labels: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceSpec {
    pub corpus: CorpusSource,
    pub history: usize,
    #[serde(default)]
    pub window_mode: WindowMode,
    /// Fractions of normal and abnormal sessions placed in training.
    pub train_normal_fraction: f64,
    pub train_abnormal_fraction: f64,
    pub hidden: usize,
    pub layers: usize,
    pub training: TrainingSpec,
    /// Noise scales; the non-private baseline is always run.
    pub sigmas: Vec<f64>,
    pub k_grid: Vec<usize>,
    pub tp_grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackdoorSpec {
    pub source: ImageSource,
    pub train_size: usize,
    pub test_size: usize,
    pub poison_ratios: Vec<f64>,
    #[serde(default)]
    pub trigger: PoisonSpec,
    pub model: ModelArch,
    pub training: TrainingSpec,
    /// Noise scales at `training.clip`; baseline and `sigma = 0` always run.
    pub sigmas: Vec<f64>,
    /// Clipping bounds run at `clip_grid_sigma`.
    #[serde(default)]
    pub clip_grid: Vec<f64>,
    #[serde(default = "default_clip_grid_sigma")]
    pub clip_grid_sigma: f64,
}

fn default_clip_grid_sigma() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UaermSpec {
    pub normal: ImageSource,
    pub novel: ImageSource,
    /// Size of the clean pool the oracle is trained on.
    pub oracle_size: usize,
    pub sizes: Vec<usize>,
    pub sigmas: Vec<f64>,
    /// Random subsets per cell; each trained `repeats` times.
    pub subsets: usize,
    pub repeats: usize,
    pub nd_normal: usize,
    pub nd_novel: usize,
    pub model: ModelArch,
    pub training: TrainingSpec,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn check_sigmas(sigmas: &[f64]) -> Result<()> {
    if let Some(s) = sigmas.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
        return Err(config_err(format!("noise scale {s} must be finite and non-negative")));
    }
    Ok(())
}

fn check_ratios(name: &str, ratios: &[f64]) -> Result<()> {
    if ratios.is_empty() {
        return Err(config_err(format!("{name} grid is empty")));
    }
    if let Some(r) = ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(config_err(format!("{name} value {r} outside [0, 1]")));
    }
    Ok(())
}

fn check_training(t: &TrainingSpec, n: usize) -> Result<()> {
    t.dp_config(Some(t.clip), Some(0.0), 0).validate(n)
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(config_err("seed list is empty"));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(config_err("seeds must be distinct"));
        }
        match &self.experiment {
            ExperimentSpec::Outlier(s) => {
                check_ratios("outlier ratio", &s.outlier_ratios)?;
                check_sigmas(&s.sigmas)?;
                s.model.validate()?;
                check_training(&s.training, s.train_size)?;
            }
            ExperimentSpec::Sequence(s) => {
                check_sigmas(&s.sigmas)?;
                if s.k_grid.is_empty() && s.tp_grid.is_empty() {
                    return Err(config_err("sequence detection needs a k grid or a T_p grid"));
                }
                if s.k_grid.contains(&0) {
                    return Err(config_err("k must be at least 1"));
                }
                for f in [s.train_normal_fraction, s.train_abnormal_fraction] {
                    if !(0.0..=1.0).contains(&f) {
                        return Err(config_err(format!("training fraction {f} outside [0, 1]")));
                    }
                }
                let vocab = match &s.corpus {
                    CorpusSource::Synthetic { vocab, .. } | CorpusSource::Files { vocab, .. } => *vocab,
                };
                if let Some(k) = s.k_grid.iter().find(|&&k| k > vocab) {
                    return Err(config_err(format!("k = {k} exceeds vocabulary {vocab}")));
                }
                ModelArch::LstmLm { vocab, history: s.history, hidden: s.hidden, layers: s.layers }.validate()?;
                check_training(&s.training, s.training.batch_size)?;
            }
            ExperimentSpec::Backdoor(s) => {
                check_ratios("poison ratio", &s.poison_ratios)?;
                check_sigmas(&s.sigmas)?;
                check_sigmas(&[s.clip_grid_sigma])?;
                if let Some(c) = s.clip_grid.iter().find(|c| !(c.is_finite() && **c > 0.0)) {
                    return Err(config_err(format!("clipping bound {c} must be positive")));
                }
                s.model.validate()?;
                check_training(&s.training, s.train_size)?;
            }
            ExperimentSpec::Uaerm(s) => {
                if s.sizes.is_empty() || s.sigmas.is_empty() {
                    return Err(config_err("uaerm grid is empty"));
                }
                check_sigmas(&s.sigmas)?;
                if s.subsets == 0 || s.repeats == 0 {
                    return Err(config_err("subsets and repeats must be positive"));
                }
                if let Some(n) = s.sizes.iter().find(|&&n| n == 0 || n > s.oracle_size) {
                    return Err(config_err(format!("subset size {n} outside 1..={}", s.oracle_size)));
                }
                s.model.validate()?;
                check_training(&s.training, *s.sizes.iter().min().expect("non-empty"))?;
            }
        }
        Ok(())
    }
}
