use dpad_core::data::{PoisonSpec, WindowMode};
use dpad_core::dp::SamplingMode;
use dpad_core::harness::{
    compare_manifests, desk_backdoor, desk_outlier, desk_sequence, desk_uaerm, execute, rerun_manifest, run_experiment,
    BackdoorSpec, CorpusSource, ExperimentConfig, ExperimentSpec, ImageSource, OutlierSpec, SequenceSpec, TrainingSpec,
    UaermSpec, MANIFEST_FILE,
};
use dpad_core::nn::{Activation, ModelArch};

fn small_pool() -> ImageSource {
    ImageSource::Synthetic { train_pool: 400, test_pool: 120, seed: 3 }
}

fn tiny_ae() -> ModelArch {
    ModelArch::DenseAutoencoder {
        widths: vec![784, 8, 784],
        hidden_activation: Activation::Relu,
        output_activation: Activation::Sigmoid,
    }
}

fn training(epochs: usize) -> TrainingSpec {
    TrainingSpec {
        learning_rate: 0.3,
        batch_size: 50,
        epochs,
        clip: 1.0,
        sampling: SamplingMode::Shuffled,
        delta: 1e-5,
    }
}

fn cfg(name: &str, experiment: ExperimentSpec) -> ExperimentConfig {
    ExperimentConfig { name: name.into(), seeds: vec![1, 2], output_dir: None, save_checkpoints: false, experiment }
}

fn outlier_cfg() -> ExperimentConfig {
    cfg(
        "tiny-outlier",
        ExperimentSpec::Outlier(OutlierSpec {
            normal: small_pool(),
            outliers: small_pool(),
            train_size: 200,
            outlier_ratios: vec![0.1],
            nd_normal: 40,
            nd_novel: 40,
            model: tiny_ae(),
            training: training(2),
            sigmas: vec![1.0],
        }),
    )
}

#[test]
fn outlier_grid_has_every_arm() {
    let out = execute(&outlier_cfg(), None).unwrap();
    assert!(out.failures.is_empty(), "{:?}", out.failures);
    let t = out.table("outlier.csv").unwrap();
    // none, 0 and 1 for each of two seeds.
    assert_eq!(t.rows.len(), 6);
    let sigmas: Vec<&str> = t.rows.iter().map(|r| r.key[1].as_str()).collect();
    assert_eq!(&sigmas[..3], ["none", "0", "1"]);
    for r in &t.rows {
        let aupr = r.values[1].unwrap();
        assert!((0.0..=1.0).contains(&aupr));
    }
    // Baseline runs have no epsilon; sigma = 0 has an infinite one.
    assert_eq!(t.rows[0].values[0], None);
    assert_eq!(t.rows[1].values[0], Some(f64::INFINITY));
    assert!(t.rows[2].values[0].unwrap().is_finite());
    let csv = t.to_csv();
    assert!(csv.starts_with("config_id,sigma,outlier_ratio,seed,status,epsilon,od_aupr"));
    assert!(csv.contains("\"sigma=none,r_o=0.1\",none,0.1,1,ok,NA,"));
    assert!(csv.contains(",mean,"));
}

#[test]
fn manifest_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a");
    let second = dir.path().join("b");
    let (manifest, _) = run_experiment(&outlier_cfg(), &first).unwrap();
    assert_eq!(manifest.outputs.len(), 1);
    let (rerun, diffs) = rerun_manifest(&first.join(MANIFEST_FILE), &second).unwrap();
    assert!(diffs.is_empty(), "{diffs:?}");
    assert_eq!(compare_manifests(&manifest, &rerun), Vec::<String>::new());
    let a = std::fs::read(first.join("outlier.csv")).unwrap();
    let b = std::fs::read(second.join("outlier.csv")).unwrap();
    assert_eq!(a, b);
    let runs = std::fs::read_to_string(first.join("runs.jsonl")).unwrap();
    assert_eq!(runs.lines().count(), 6);
}

#[test]
fn changed_seed_shows_up_as_differences() {
    let dir = tempfile::tempdir().unwrap();
    let (a, _) = run_experiment(&outlier_cfg(), &dir.path().join("a")).unwrap();
    let mut other = outlier_cfg();
    other.seeds = vec![1, 3];
    let (b, _) = run_experiment(&other, &dir.path().join("b")).unwrap();
    let diffs = compare_manifests(&a, &b);
    assert!(diffs.iter().any(|d| d.starts_with("output outlier.csv")));
    assert!(diffs.iter().any(|d| d.contains("seed2") && d.contains("missing")));
}

#[test]
fn checkpoints_are_written_when_requested() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = outlier_cfg();
    c.seeds = vec![1];
    c.save_checkpoints = true;
    let (_, out) = run_experiment(&c, dir.path()).unwrap();
    for r in &out.runs {
        let path = dir.path().join(r.checkpoint.as_ref().unwrap());
        let model = dpad_core::nn::load_checkpoint(&path).unwrap();
        assert_eq!(model.arch(), &tiny_ae());
    }
}

#[test]
fn diverging_cells_are_reported_not_fatal() {
    let mut c = outlier_cfg();
    c.seeds = vec![1];
    if let ExperimentSpec::Outlier(s) = &mut c.experiment {
        s.training.learning_rate = 1e6;
        s.model = ModelArch::DenseAutoencoder {
            widths: vec![784, 8, 784],
            hidden_activation: Activation::Identity,
            output_activation: Activation::Identity,
        };
    }
    let out = execute(&c, None).unwrap();
    let t = out.table("outlier.csv").unwrap();
    assert!(t.rows.iter().any(|r| r.status.label().starts_with("diverged")));
}

#[test]
fn sequence_grid_reports_topk_and_probability_rows() {
    let c = cfg(
        "tiny-sequence",
        ExperimentSpec::Sequence(SequenceSpec {
            corpus: CorpusSource::Synthetic { vocab: 12, n_normal: 60, n_abnormal: 20, automaton_seed: 4 },
            history: 4,
            window_mode: WindowMode::Prefix,
            train_normal_fraction: 0.5,
            train_abnormal_fraction: 0.1,
            hidden: 6,
            layers: 1,
            training: TrainingSpec { batch_size: 32, learning_rate: 0.5, ..training(1) },
            sigmas: vec![1.0],
            k_grid: vec![1, 3],
            tp_grid: vec![0.01],
        }),
    );
    let out = execute(&c, None).unwrap();
    assert!(out.failures.is_empty(), "{:?}", out.failures);
    let t = out.table("sequence.csv").unwrap();
    // 2 seeds x 2 arms x 3 detectors.
    assert_eq!(t.rows.len(), 12);
    for r in &t.rows {
        let [tp, fp, tn, fn_] = [r.values[1], r.values[2], r.values[3], r.values[4]].map(Option::unwrap);
        // 30 normal and 18 abnormal sessions are held out.
        assert_eq!(tp + fp + tn + fn_, 48.0);
        assert_eq!(tp + fn_, 18.0);
    }
    let k1 = t.rows.iter().find(|r| r.key[0] == "sigma=none,top-k=1").unwrap();
    let k3 = t.rows.iter().find(|r| r.key[0] == "sigma=none,top-k=3").unwrap();
    // Larger k flags fewer sessions.
    assert!(k3.values[1].unwrap() + k3.values[2].unwrap() <= k1.values[1].unwrap() + k1.values[2].unwrap());
}

#[test]
fn backdoor_grid_includes_clip_sweep() {
    let c = cfg(
        "tiny-backdoor",
        ExperimentSpec::Backdoor(BackdoorSpec {
            source: small_pool(),
            train_size: 200,
            test_size: 50,
            poison_ratios: vec![0.05],
            trigger: PoisonSpec::default(),
            model: ModelArch::Classifier { channels: [2, 2], kernel: 3, hidden: 0, classes: 10 },
            training: training(1),
            sigmas: vec![0.5],
            clip_grid: vec![1.0, 4.0],
            clip_grid_sigma: 0.5,
        }),
    );
    let out = execute(&c, None).unwrap();
    assert!(out.failures.is_empty(), "{:?}", out.failures);
    let t = out.table("backdoor.csv").unwrap();
    let ids: Vec<&str> = t.rows.iter().filter(|r| r.seed == 1).map(|r| r.key[0].as_str()).collect();
    assert_eq!(
        ids,
        [
            "sigma=none,clip=none,r_p=0.05",
            "sigma=0,clip=1,r_p=0.05",
            "sigma=0.5,clip=1,r_p=0.05",
            "sigma=0.5,clip=4,r_p=0.05",
        ]
    );
    for r in &t.rows {
        for v in &r.values[1..3] {
            assert!((0.0..=100.0).contains(&v.unwrap()));
        }
        assert!((0.0..=1.0).contains(&r.values[4].unwrap()));
    }
}

#[test]
fn uaerm_grid_and_trend() {
    let c = cfg(
        "tiny-uaerm",
        ExperimentSpec::Uaerm(UaermSpec {
            normal: small_pool(),
            novel: small_pool(),
            oracle_size: 200,
            sizes: vec![100, 200],
            sigmas: vec![0.5, 2.0],
            subsets: 2,
            repeats: 1,
            nd_normal: 30,
            nd_novel: 30,
            model: tiny_ae(),
            training: training(1),
        }),
    );
    let out = execute(&c, None).unwrap();
    assert!(out.failures.is_empty(), "{:?}", out.failures);
    let t = out.table("uaerm.csv").unwrap();
    assert_eq!(t.rows.len(), 8);
    for r in &t.rows {
        assert!(r.values[1].unwrap() >= r.values[2].unwrap());
        assert_eq!(r.values[3], Some(2.0));
    }
    let trend = out.table("uaerm_trend.csv").unwrap();
    assert_eq!(trend.rows.len(), 4);
    // One oracle plus 2 sizes x 2 scales x 2 models, per seed.
    assert_eq!(out.runs.len(), 2 * 9);
}

#[test]
fn presets_validate_and_round_trip() {
    for c in [desk_outlier(&[1, 2, 3]), desk_backdoor(&[1, 2, 3]), desk_sequence(&[1, 2, 3]), desk_uaerm(&[1])] {
        c.validate().unwrap();
        let text = c.to_toml();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), c);
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let mut c = outlier_cfg();
    c.seeds = vec![1, 1];
    assert!(c.validate().is_err());
    let mut c = outlier_cfg();
    if let ExperimentSpec::Outlier(s) = &mut c.experiment {
        s.outlier_ratios = vec![1.5];
    }
    assert!(c.validate().is_err());
    let text = outlier_cfg().to_toml().replace("name = ", "bogus = 1\nname = ");
    assert!(ExperimentConfig::from_toml(&text).is_err());
}
