//! Differentially private SGD: per-example clipping to norm `C`, Gaussian
//! noise of standard deviation `sigma * C` on the clipped sum, and a plain
//! SGD update. With clipping and noise disabled the trainer is exactly
//! mini-batch SGD.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::{ChaCha20Rng, ChaCha8Rng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{GradientBatch, LossKind, Model, Sample};
use crate::privacy::AccountantState;
use crate::tensor::{axpy, l2_norm};

const NOISE_SALT: u64 = 0x6e6f_6973_655f_7331;
/// Slack allowed when checking that rows are already clipped.
const CLIP_CONTRACT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    /// Reshuffle each epoch, then walk fixed-size mini-batches.
    #[default]
    Shuffled,
    /// Each example joins each step's batch independently with rate `B/N`.
    Poisson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    /// Per-example clipping bound; `None` disables clipping.
    pub clip: Option<f64>,
    /// Noise multiplier; `None` disables noise (the non-private baseline).
    pub sigma: Option<f64>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    #[serde(default)]
    pub sampling: SamplingMode,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_delta() -> f64 {
    1e-5
}

impl DpConfig {
    /// Plain mini-batch SGD.
    pub fn baseline(learning_rate: f64, batch_size: usize, epochs: usize, seed: u64) -> Self {
        Self {
            clip: None,
            sigma: None,
            learning_rate,
            batch_size,
            epochs,
            seed,
            sampling: SamplingMode::Shuffled,
            delta: default_delta(),
        }
    }

    pub fn private(clip: f64, sigma: f64, learning_rate: f64, batch_size: usize, epochs: usize, seed: u64) -> Self {
        Self { clip: Some(clip), sigma: Some(sigma), ..Self::baseline(learning_rate, batch_size, epochs, seed) }
    }

    pub fn validate(&self, dataset_size: usize) -> Result<()> {
        if self.sigma.is_some() && self.clip.is_none() {
            return Err(Error::Config("noise scale set without a clipping bound".into()));
        }
        if let Some(c) = self.clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("clipping bound must be positive, got {c}")));
            }
        }
        if let Some(s) = self.sigma {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("noise scale must be non-negative, got {s}")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.batch_size > dataset_size {
            return Err(Error::Config(format!("batch size {} must be in 1..={dataset_size}", self.batch_size)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta must be in (0, 1), got {}", self.delta)));
        }
        Ok(())
    }

    /// Whether privacy is being accounted (noise is configured).
    pub fn is_private(&self) -> bool {
        self.sigma.is_some()
    }
}

/// Scales `g` by `min(1, C / |g|)`.
pub fn clip_gradient(g: &[f64], c: f64) -> Result<Vec<f64>> {
    if !(c > 0.0) {
        return Err(Error::Input(format!("clipping bound must be positive, got {c}")));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("gradient has non-finite entries".into()));
    }
    let scale = clip_scale(l2_norm(g), c);
    if scale == 1.0 {
        return Ok(g.to_vec());
    }
    Ok(g.iter().map(|v| v * scale).collect())
}

/// Clip factor for a gradient of norm `norm`. Norms within a few ulps of
/// `c` count as already clipped, which keeps clipping idempotent.
pub(crate) fn clip_scale(norm: f64, c: f64) -> f64 {
    if norm <= c * (1.0 + 4.0 * f64::EPSILON) {
        1.0
    } else {
        c / norm
    }
}

fn add_noise(sum: &mut [f64], std: f64, rng: &mut impl Rng) {
    if std > 0.0 {
        for v in sum.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += std * z;
        }
    }
}

/// `(sum_i g_i + z) / B` with `z ~ N(0, (sigma C)^2 I)`. Every row must
/// already be clipped to `C`.
pub fn noisy_aggregate(batch: &GradientBatch, sigma: f64, c: f64, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let b = batch.batch_size();
    if b == 0 {
        return Err(Error::Input("empty gradient batch".into()));
    }
    for (i, n) in batch.norms().into_iter().enumerate() {
        if n > c + CLIP_CONTRACT_TOL {
            return Err(Error::Contract(format!("row {i} has norm {n} above clipping bound {c}")));
        }
    }
    let mut sum = vec![0.0; batch.dim()];
    for row in batch.rows() {
        axpy(1.0, row, &mut sum);
    }
    add_noise(&mut sum, sigma * c, rng);
    let inv = 1.0 / b as f64;
    sum.iter_mut().for_each(|v| *v *= inv);
    Ok(sum)
}

/// Seeded noise source keyed by step index, so the noise sequence does not
/// depend on how gradient work is scheduled.
#[derive(Debug, Clone, Copy)]
pub struct NoiseStream {
    seed: u64,
}

impl NoiseStream {
    pub fn new(seed: u64) -> Self {
        Self { seed: seed ^ NOISE_SALT }
    }

    pub fn for_step(&self, step: u64) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(step);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub mean_loss: f64,
    pub loss_sum: f64,
    pub batch_size: usize,
    pub clipped: usize,
}

/// One update: `params -= lr * (sum_i clip(g_i) + z) / B`. `divisor`
/// overrides `B` (Poisson sampling divides by the expected batch size).
pub fn dp_sgd_step(
    model: &mut Model,
    batch: &[&Sample],
    kind: LossKind,
    cfg: &DpConfig,
    rng: &mut impl Rng,
) -> Result<StepStats> {
    dp_sgd_step_with_divisor(model, batch, kind, cfg, rng, batch.len())
}

fn dp_sgd_step_with_divisor(
    model: &mut Model,
    batch: &[&Sample],
    kind: LossKind,
    cfg: &DpConfig,
    rng: &mut impl Rng,
    divisor: usize,
) -> Result<StepStats> {
    let mut update = vec![0.0; model.param_count()];
    let mut stats = StepStats { mean_loss: 0.0, loss_sum: 0.0, batch_size: batch.len(), clipped: 0 };
    if !batch.is_empty() {
        let grads = model.batch_gradients(batch, kind)?;
        let loss_sum: f64 = grads.losses().iter().sum();
        if !loss_sum.is_finite() {
            return Err(Error::Diverged { epoch: 0, step: 0 });
        }
        let weights: Vec<f64> = match cfg.clip {
            Some(c) => grads
                .sq_norms()
                .into_iter()
                .map(|sq| {
                    let s = clip_scale(sq.sqrt(), c);
                    if s < 1.0 {
                        stats.clipped += 1;
                    }
                    s
                })
                .collect(),
            None => vec![1.0; batch.len()],
        };
        grads.weighted_sum(&weights, &mut update);
        stats.loss_sum = loss_sum;
        stats.mean_loss = loss_sum / batch.len() as f64;
    }
    if let (Some(sigma), Some(c)) = (cfg.sigma, cfg.clip) {
        add_noise(&mut update, sigma * c, rng);
    }
    if divisor == 0 {
        return Ok(stats);
    }
    let scale = -cfg.learning_rate / divisor as f64;
    if update.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged { epoch: 0, step: 0 });
    }
    axpy(scale, &update, model.params_mut());
    if model.params().iter().any(|v| !v.is_finite()) {
        axpy(-scale, &update, model.params_mut());
        return Err(Error::Diverged { epoch: 0, step: 0 });
    }
    Ok(stats)
}

/// Plain mini-batch SGD step: `params -= lr * mean_i g_i`.
pub fn sgd_step(model: &mut Model, batch: &[&Sample], kind: LossKind, learning_rate: f64) -> Result<StepStats> {
    let grads = model.batch_gradients(batch, kind)?;
    let mut update = vec![0.0; model.param_count()];
    grads.weighted_sum(&vec![1.0; batch.len()], &mut update);
    axpy(-learning_rate / batch.len() as f64, &update, model.params_mut());
    let loss_sum: f64 = grads.losses().iter().sum();
    Ok(StepStats { mean_loss: loss_sum / batch.len() as f64, loss_sum, batch_size: batch.len(), clipped: 0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Privacy spent so far; `None` for non-private training.
    pub epsilon: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum TrainStatus {
    Completed,
    /// Loss or parameters went non-finite; the model is the last finite state.
    Diverged {
        epoch: usize,
        step: usize,
    },
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub model: Model,
    pub epsilon: Option<f64>,
    pub steps: u64,
    pub sampling: SamplingMode,
    pub status: TrainStatus,
    pub wall_seconds: f64,
}

impl TrainReport {
    /// One JSON object per epoch, newline-terminated.
    pub fn to_jsonl(&self) -> String {
        self.epochs.iter().map(|e| serde_json::to_string(e).expect("epoch record serializes") + "\n").collect()
    }

    pub fn diverged(&self) -> bool {
        matches!(self.status, TrainStatus::Diverged { .. })
    }
}

/// Trains for `cfg.epochs` epochs of `ceil(N / B)` steps each, advancing
/// the accountant once per step when noise is configured.
pub fn train(model: Model, data: &[Sample], kind: LossKind, cfg: &DpConfig) -> Result<TrainReport> {
    let n = data.len();
    if n == 0 {
        return Err(Error::Input("empty training set".into()));
    }
    cfg.validate(n)?;
    let started = Instant::now();
    let mut model = model;
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let mut accountant =
        cfg.sigma.map(|sigma| AccountantState::new(cfg.batch_size as f64 / n as f64, sigma, cfg.delta));
    let noise = NoiseStream::new(cfg.seed);
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut step: u64 = 0;
    let mut status = TrainStatus::Completed;

    'epochs: for epoch in 0..cfg.epochs {
        let epoch_start = Instant::now();
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        if cfg.sampling == SamplingMode::Shuffled {
            order.shuffle(&mut order_rng);
        }
        let q = cfg.batch_size as f64 / n as f64;
        for s in 0..steps_per_epoch {
            let batch: Vec<&Sample> = match cfg.sampling {
                SamplingMode::Shuffled => {
                    let lo = s * cfg.batch_size;
                    order[lo..(lo + cfg.batch_size).min(n)].iter().map(|&i| &data[i]).collect()
                }
                SamplingMode::Poisson => data.iter().filter(|_| order_rng.gen::<f64>() < q).collect(),
            };
            let divisor = match cfg.sampling {
                SamplingMode::Shuffled => batch.len(),
                SamplingMode::Poisson => cfg.batch_size,
            };
            let mut rng = noise.for_step(step);
            match dp_sgd_step_with_divisor(&mut model, &batch, kind, cfg, &mut rng, divisor) {
                Ok(stats) => {
                    loss_sum += stats.loss_sum;
                    seen += stats.batch_size;
                }
                Err(Error::Diverged { .. }) => {
                    status = TrainStatus::Diverged { epoch, step: s };
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
            step += 1;
            if let Some(acc) = accountant.as_mut() {
                acc.step();
            }
        }
        records.push(EpochRecord {
            epoch,
            mean_loss: if seen > 0 { loss_sum / seen as f64 } else { 0.0 },
            epsilon: accountant.as_ref().map(AccountantState::epsilon),
            seconds: epoch_start.elapsed().as_secs_f64(),
        });
    }

    Ok(TrainReport {
        epochs: records,
        model,
        epsilon: accountant.as_ref().map(AccountantState::epsilon),
        steps: step,
        sampling: cfg.sampling,
        status,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}
