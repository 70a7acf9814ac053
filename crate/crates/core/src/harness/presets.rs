//! Desk-scale configurations: small enough for a single CPU core, large
//! enough to show each effect.

use super::{
    BackdoorSpec, CorpusSource, ExperimentConfig, ExperimentSpec, ImageSource, OutlierSpec, SequenceSpec, TrainingSpec,
    UaermSpec,
};
use crate::data::{PoisonSpec, WindowMode};
use crate::dp::SamplingMode;
use crate::nn::ModelArch;

fn training(learning_rate: f64, batch_size: usize, epochs: usize) -> TrainingSpec {
    TrainingSpec { learning_rate, batch_size, epochs, clip: 1.0, sampling: SamplingMode::Shuffled, delta: 1e-5 }
}

fn config(name: &str, seeds: &[u64], experiment: ExperimentSpec) -> ExperimentConfig {
    ExperimentConfig { name: name.into(), seeds: seeds.to_vec(), output_dir: None, save_checkpoints: false, experiment }
}

/// 6000 training images with 5% letters mixed in, dense autoencoder.
pub fn desk_outlier(seeds: &[u64]) -> ExperimentConfig {
    config(
        "desk-outlier",
        seeds,
        ExperimentSpec::Outlier(OutlierSpec {
            normal: ImageSource::synthetic(0),
            outliers: ImageSource::synthetic(0),
            train_size: 6000,
            outlier_ratios: vec![0.05],
            nd_normal: 500,
            nd_novel: 500,
            model: ModelArch::default_dense_autoencoder(),
            training: training(0.5, 200, 20),
            sigmas: vec![1.0, 5.0],
        }),
    )
}

/// 6000 training images with 1% carrying the trigger.
pub fn desk_backdoor(seeds: &[u64]) -> ExperimentConfig {
    config(
        "desk-backdoor",
        seeds,
        ExperimentSpec::Backdoor(BackdoorSpec {
            source: ImageSource::synthetic(0),
            train_size: 6000,
            test_size: 1000,
            poison_ratios: vec![0.01],
            trigger: PoisonSpec::default(),
            model: ModelArch::default_classifier(),
            training: training(0.3, 200, 40),
            sigmas: vec![0.5],
            clip_grid: Vec::new(),
            clip_grid_sigma: 0.5,
        }),
    )
}

/// Synthetic workflow logs, 2000 normal and 200 abnormal sessions per seed.
pub fn desk_sequence(seeds: &[u64]) -> ExperimentConfig {
    config(
        "desk-sequence",
        seeds,
        ExperimentSpec::Sequence(SequenceSpec {
            corpus: CorpusSource::Synthetic { vocab: 29, n_normal: 2000, n_abnormal: 200, automaton_seed: 1 },
            history: 10,
            window_mode: WindowMode::Prefix,
            train_normal_fraction: 0.5,
            train_abnormal_fraction: 0.1,
            hidden: 32,
            layers: 2,
            training: TrainingSpec { clip: 5.0, ..training(1.0, 256, 20) },
            sigmas: vec![1.0],
            k_grid: (1..=9).collect(),
            tp_grid: vec![1e-4, 1e-3, 1e-2],
        }),
    )
}

/// Gap grid over subset size and noise scale, 3 subsets x 3 repeats.
pub fn desk_uaerm(seeds: &[u64]) -> ExperimentConfig {
    config(
        "desk-uaerm",
        seeds,
        ExperimentSpec::Uaerm(UaermSpec {
            normal: ImageSource::synthetic(0),
            novel: ImageSource::synthetic(0),
            oracle_size: 6000,
            sizes: vec![1000, 3000, 6000],
            sigmas: vec![0.5, 1.0, 5.0],
            subsets: 3,
            repeats: 3,
            nd_normal: 500,
            nd_novel: 500,
            model: ModelArch::default_dense_autoencoder(),
            training: training(0.5, 200, 60),
        }),
    )
}
