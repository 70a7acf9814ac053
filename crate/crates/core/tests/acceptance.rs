//! One PASS/FAIL line per acceptance criterion, run in order.
//!
//! Criteria 1-5 and 10 are exact properties of the code and fail the test
//! when they fail. Criteria 6-9 are desk-scale training experiments; their
//! lines are printed with the measured numbers but do not abort the run,
//! so one empirical shortfall cannot hide the others.

mod common;

use std::cell::Cell;
use std::path::{Path, PathBuf};
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dpad_core::harness::{
    desk_backdoor, desk_outlier, desk_sequence, desk_uaerm, rerun_manifest, run_experiment, ExperimentSpec, Table,
    MANIFEST_FILE,
};
use dpad_core::metrics::{aupr, auroc, confusion_stats, ConfusionCounts, Direction, ScoreRecord};
use dpad_core::nn::{build_model, Activation, LossKind, ModelArch, Sample};
use dpad_core::privacy::{gaussian_sigma, outlier_gap_bound, AccountantState, GapBoundInputs, MechanismSpec};

const SEEDS: [u64; 3] = [1, 2, 3];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn out_dir(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name)
}

// 1
fn gaussian_calibration() -> Outcome {
    let got = gaussian_sigma(&MechanismSpec { sensitivity: 1.0, epsilon: 0.5, delta: 1e-5 }).unwrap();
    let oracle = common::gaussian_sigma_reference(1.0, 0.5, -5);
    let pass = (got - 9.689610).abs() <= 1e-5 && (oracle - 9.689610).abs() <= 1e-5;
    outcome(pass, format!("sigma {got:.7}, reference {oracle:.7}, target 9.689610 +- 1e-5"))
}

fn eps(q: f64, sigma: f64, steps: u64) -> f64 {
    let mut s = AccountantState::new(q, sigma, 1e-5);
    s.steps = steps;
    s.epsilon()
}

// 2
fn accountant_golden() -> Outcome {
    let q = 200.0 / 60000.0;
    let mut pass = true;
    let mut parts = Vec::new();
    for (sigma, want) in [(0.5, 22.23), (1.0, 3.09), (5.0, 0.44), (10.0, 0.25)] {
        let got = eps(q, sigma, 18_000);
        let ok = (got - want).abs() <= 0.25 * want;
        pass &= ok;
        parts.push(format!("sigma {sigma}: {got:.4} (target {want})"));
    }
    // Monotone: more steps or a larger rate never cost less; more noise never costs more.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut violations = 0;
    for _ in 0..1000 {
        let q = rng.gen_range(1e-4..0.2);
        let sigma = rng.gen_range(0.3..12.0);
        let steps = rng.gen_range(1..20_000u64);
        let base = eps(q, sigma, steps);
        let checks = [
            eps(q, sigma, steps + rng.gen_range(1..1000)) >= base,
            eps((q * rng.gen_range(1.01..3.0)).min(1.0), sigma, steps) >= base,
            eps(q, sigma * rng.gen_range(1.01..3.0), steps) <= base,
        ];
        violations += checks.iter().filter(|ok| !**ok).count();
    }
    pass &= violations == 0;
    parts.push(format!("{violations} monotonicity violations in 1000 triples"));
    outcome(pass, parts.join("; "))
}

fn random_image(rng: &mut ChaCha8Rng, width: usize) -> Vec<f64> {
    (0..width).map(|_| rng.gen_range(0.0..1.0)).collect()
}

/// Up to 300 parameter indices, spread over every layer.
fn coords(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if n <= 300 {
        return (0..n).collect();
    }
    (0..300).map(|_| rng.gen_range(0..n)).collect()
}

// 3
fn gradient_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let acts = [Activation::Relu, Activation::Sigmoid, Activation::Identity];
    let mut worst: [f64; 5] = [0.0; 5];
    let mut retried = 0;
    for i in 0..100 {
        let family = i % 5;
        let seed = 100 + i as u64;
        let (model, sample, kind) = match family {
            0 => {
                let w = rng.gen_range(4..12);
                let arch = ModelArch::DenseAutoencoder {
                    widths: vec![w, rng.gen_range(2..6), w],
                    hidden_activation: acts[i % 3],
                    output_activation: acts[(i / 3) % 3],
                };
                (
                    build_model(&arch, seed).unwrap(),
                    Sample::image(random_image(&mut rng, w)),
                    LossKind::ReconstructionMse,
                )
            }
            1 => {
                let arch = ModelArch::ConvAutoencoder { channels: [2, 1, 1], kernel: 3 };
                (
                    build_model(&arch, seed).unwrap(),
                    Sample::image(random_image(&mut rng, 784)),
                    LossKind::ReconstructionMse,
                )
            }
            2 => {
                let arch = ModelArch::Classifier { channels: [2, 2], kernel: 3, hidden: 4, classes: 3 };
                let label = rng.gen_range(0..3);
                (
                    build_model(&arch, seed).unwrap(),
                    Sample::labeled_image(random_image(&mut rng, 784), label),
                    LossKind::CrossEntropy,
                )
            }
            3 => {
                let arch = ModelArch::Classifier { channels: [1, 2], kernel: 5, hidden: 0, classes: 4 };
                let label = rng.gen_range(0..4);
                (
                    build_model(&arch, seed).unwrap(),
                    Sample::labeled_image(random_image(&mut rng, 784), label),
                    LossKind::CrossEntropy,
                )
            }
            _ => {
                let vocab = rng.gen_range(4..9);
                let history = rng.gen_range(1..5);
                let arch = ModelArch::LstmLm { vocab, history, hidden: rng.gen_range(2..5), layers: 1 + i % 2 };
                let hist = (0..history).map(|_| rng.gen_range(0..vocab)).collect();
                (
                    build_model(&arch, seed).unwrap(),
                    Sample::next_token(hist, rng.gen_range(0..vocab)),
                    LossKind::CrossEntropy,
                )
            }
        };
        // Zero biases put dead units exactly on a ReLU kink; jitter every
        // parameter so the check runs at a differentiable point.
        let mut model = model;
        for v in model.params_mut() {
            *v += rng.gen_range(-0.05..0.05);
        }
        let idx = coords(model.param_count(), &mut rng);
        let (err, r) = common::finite_difference_error(&model, &sample, kind, &idx, 1e-4);
        worst[family] = worst[family].max(err);
        retried += r;
    }
    let max = worst.iter().copied().fold(0.0, f64::max);
    outcome(
        max <= 1e-4,
        format!(
            "max relative error {max:.2e} over 100 instances (dense {:.1e}, conv-ae {:.1e}, classifier {:.1e}, classifier-k5 {:.1e}, lstm {:.1e}); {retried} coordinates needed a step below 1e-5",
            worst[0], worst[1], worst[2], worst[3], worst[4]
        ),
    )
}

// 4
fn metric_oracles() -> Outcome {
    let mut runner = TestRunner::new(Config { cases: 500, failure_persistence: None, ..Config::default() });
    let strategy = (2usize..=200, any::<u64>(), prop::bool::ANY);
    let worst_roc = Cell::new(0.0f64);
    let worst_pr = Cell::new(0.0f64);
    let result = runner.run(&strategy, |(n, seed, lower)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Coarse scores so ties are frequent.
        let levels = rng.gen_range(2..40);
        let dir = if lower { Direction::LowerIsAnomalous } else { Direction::HigherIsAnomalous };
        let mut records: Vec<ScoreRecord> = (0..n)
            .map(|i| ScoreRecord::new(i as u64, rng.gen_range(0..levels) as f64 / 7.0, rng.gen_bool(0.3), dir))
            .collect();
        records[0].positive = true;
        records[1].positive = false;
        let roc = (auroc(&records).unwrap().area - common::pairwise_auroc(&records)).abs();
        let pr = (aupr(&records).unwrap().area - common::enumerated_aupr(&records)).abs();
        worst_roc.set(worst_roc.get().max(roc));
        worst_pr.set(worst_pr.get().max(pr));
        prop_assert!(roc <= 1e-12 && pr <= 1e-12);
        Ok(())
    });
    let hand = [
        // (tp, fp, tn, fn) -> precision, recall, F
        ((8, 2, 5, 2), Some(0.8), Some(0.8), Some(0.8)),
        ((1, 1, 1, 1), Some(0.5), Some(0.5), Some(0.5)),
        ((3, 0, 4, 0), Some(1.0), Some(1.0), Some(1.0)),
        ((0, 0, 5, 2), None, Some(0.0), Some(0.0)),
        ((0, 0, 5, 0), None, None, None),
    ];
    let hand_ok = hand.iter().all(|&((tp, fp, tn, fn_), p, r, f)| {
        let s = confusion_stats(&ConfusionCounts { tp, fp, tn, fn_ });
        s.precision == p && s.recall == r && s.f_measure == f
    });
    outcome(
        result.is_ok() && hand_ok,
        format!(
            "500 random sets: max AUROC error {:.1e}, max AUPR error {:.1e}; hand cases exact: {hand_ok}",
            worst_roc.get(),
            worst_pr.get()
        ),
    )
}

// 5
fn gap_bound() -> Outcome {
    let at =
        |t, xi, n, epsilon, delta, c, gamma| outlier_gap_bound(&GapBoundInputs { t, xi, n, epsilon, delta, c, gamma });
    let origin = at(0.3, 0.0, 1000, 0.0, 0.0, 3, 0.05) == 0.3;
    let point = at(1.0, 0.1, 100, 0.01, 1e-5, 1, 0.05);
    let oracle = common::gap_bound_reference(1.0, 0.1, 100.0, 0.01, 1e-5, 1.0, 0.05);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut violations = 0;
    for _ in 0..1000 {
        let (t, xi, n) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..0.5), rng.gen_range(1..10_000u64));
        let (e, d, c, g) =
            (rng.gen_range(0.0..2.0), rng.gen_range(0.0..1e-3), rng.gen_range(0..20u64), rng.gen_range(0.01..0.5));
        let base = at(t, xi, n, e, d, c, g);
        let grow = rng.gen_range(1.01..2.0);
        let checks = [
            at(t, xi * grow + 1e-3, n, e, d, c, g) <= base,
            at(t, xi, n, e * grow + 1e-3, d, c, g) <= base,
            at(t, xi, n, e, d * grow + 1e-7, c, g) <= base,
            at(t, xi, n, e, d, c + 1, g) <= base,
        ];
        violations += checks.iter().filter(|ok| !**ok).count();
    }
    let pass = origin && (point - 0.50662).abs() <= 1e-4 && (point - oracle).abs() <= 1e-12 && violations == 0;
    outcome(pass, format!("origin returns T: {origin}; point {point:.6} (reference {oracle:.6}); {violations} monotonicity violations"))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x:.4}"))
}

fn table(outcome: &dpad_core::harness::ExperimentOutcome, file: &str) -> Table {
    outcome.table(file).unwrap_or_else(|| panic!("{file} missing")).clone()
}

// 6
fn outlier_trend() -> (Outcome, PathBuf) {
    let cfg = desk_outlier(&SEEDS);
    let ExperimentSpec::Outlier(spec) = &cfg.experiment else { unreachable!() };
    let r_o = format!("{}", spec.outlier_ratios[0]);
    let dir = out_dir("outlier");
    let (_, out) = run_experiment(&cfg, &dir).unwrap();
    let t = table(&out, "outlier.csv");
    let mean = |col: &str, sigma: &str| t.mean(col, &[("sigma", sigma), ("outlier_ratio", &r_o)]);
    let mut pass = out.failures.is_empty();
    let mut parts = Vec::new();
    for (label, col) in [("OD", "od_aupr"), ("ND", "nd_aupr")] {
        let base = mean(col, "none");
        let best = ["1", "5"].iter().filter_map(|s| mean(col, s).map(|v| (*s, v))).max_by(|a, b| a.1.total_cmp(&b.1));
        let gain = match (base, best) {
            (Some(b), Some((_, v))) => Some(100.0 * (v - b)),
            _ => None,
        };
        pass &= gain.is_some_and(|g| g >= 5.0);
        parts.push(format!(
            "{label} baseline {} best sigma {} at {} (+{} points)",
            fmt_opt(base),
            best.map_or("NA".into(), |b| b.0.to_string()),
            fmt_opt(best.map(|b| b.1)),
            gain.map_or("NA".into(), |g| format!("{g:.2}"))
        ));
    }
    (outcome(pass, parts.join("; ")), dir)
}

// 7
fn backdoor_defense() -> Outcome {
    let cfg = desk_backdoor(&SEEDS);
    let ExperimentSpec::Backdoor(spec) = &cfg.experiment else { unreachable!() };
    let r_p = format!("{}", spec.poison_ratios[0]);
    let (_, out) = run_experiment(&cfg, &out_dir("backdoor")).unwrap();
    let t = table(&out, "backdoor.csv");
    let mean =
        |col: &str, sigma: &str, clip: &str| t.mean(col, &[("sigma", sigma), ("clip", clip), ("poison_ratio", &r_p)]);
    let base_success = mean("success_rate", "none", "none");
    let base_benign = mean("benign_accuracy", "none", "none");
    let dp_success = mean("success_rate", "0.5", "1");
    let dp_benign = mean("benign_accuracy", "0.5", "1");
    let dp_auroc = mean("detection_auroc", "0.5", "1");
    let checks = [
        base_success.is_some_and(|v| v >= 80.0),
        dp_success.is_some_and(|v| v <= 10.0),
        matches!((base_benign, dp_benign), (Some(b), Some(d)) if b - d <= 5.0),
        dp_auroc.is_some_and(|v| v >= 0.90),
    ];
    let mark = |ok: bool| if ok { "ok" } else { "MISSED" };
    outcome(
        out.failures.is_empty() && checks.iter().all(|c| *c),
        format!(
            "baseline success {}% [{}]; DP success {}% [{}]; benign {} -> {} [{}]; DP detection AUROC {} [{}]",
            fmt_opt(base_success),
            mark(checks[0]),
            fmt_opt(dp_success),
            mark(checks[1]),
            fmt_opt(base_benign),
            fmt_opt(dp_benign),
            mark(checks[2]),
            fmt_opt(dp_auroc),
            mark(checks[3])
        ),
    )
}

// 8
fn sequence_fn_reduction() -> Outcome {
    let cfg = desk_sequence(&SEEDS);
    let ExperimentSpec::Sequence(spec) = &cfg.experiment else { unreachable!() };
    let k = spec.k_grid[spec.k_grid.len() / 2].to_string();
    let (_, out) = run_experiment(&cfg, &out_dir("sequence")).unwrap();
    let t = table(&out, "sequence.csv");
    let mean = |col: &str, sigma: &str| t.mean(col, &[("sigma", sigma), ("detector", "top-k"), ("param", &k)]);
    let (base_fn, dp_fn) = (mean("fn", "none"), mean("fn", "1"));
    let (base_f, dp_f) = (mean("f_measure", "none"), mean("f_measure", "1"));
    let fn_ok = matches!((base_fn, dp_fn), (Some(b), Some(d)) if d <= 0.5 * b);
    let f_ok = matches!((base_f, dp_f), (Some(b), Some(d)) if d >= b - 0.02);
    outcome(
        out.failures.is_empty() && fn_ok && f_ok,
        format!(
            "k = {k}: mean FN {} -> {} (need <= 50%); mean F {} -> {} (need drop <= 0.02)",
            fmt_opt(base_fn),
            fmt_opt(dp_fn),
            fmt_opt(base_f),
            fmt_opt(dp_f)
        ),
    )
}

// 9
fn uaerm_direction() -> Outcome {
    let cfg = desk_uaerm(&[1]);
    let (_, out) = run_experiment(&cfg, &out_dir("uaerm")).unwrap();
    let trend = table(&out, "uaerm_trend.csv");
    let rho_n = trend.mean("rho", &[("axis", "n")]);
    let rho_sigma = trend.mean("rho", &[("axis", "sigma")]);
    let grid = table(&out, "uaerm.csv");
    let cells: Vec<String> =
        grid.rows.iter().map(|r| format!("n={} s={}: {}", r.key[1], r.key[2], fmt_opt(r.values[1]))).collect();
    let pass = out.failures.is_empty() && rho_n.is_some_and(|r| r <= -0.7) && rho_sigma.is_some_and(|r| r >= 0.7);
    outcome(
        pass,
        format!(
            "rho(n) {} (need <= -0.7), rho(sigma) {} (need >= 0.7); gaps {}",
            fmt_opt(rho_n),
            fmt_opt(rho_sigma),
            cells.join(", ")
        ),
    )
}

// 10
fn manifest_rerun(dir: &Path) -> Outcome {
    let (rerun, diffs) = rerun_manifest(&dir.join(MANIFEST_FILE), &out_dir("outlier-rerun")).unwrap();
    let identical = diffs.is_empty() && !rerun.outputs.is_empty();
    let files: Vec<&String> = rerun.outputs.keys().collect();
    let bytes_equal =
        files.iter().all(|f| std::fs::read(dir.join(f)).ok() == std::fs::read(out_dir("outlier-rerun").join(f)).ok());
    outcome(identical && bytes_equal, format!("reran {} ({files:?}): {} differences", dir.display(), diffs.len()))
}

#[test]
fn acceptance() {
    let mut exact_failures = Vec::new();
    let mut line = |id: usize, name: &str, exact: bool, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("{verdict} [{id}] {name}: {} ({:.1}s)", o.detail, start.elapsed().as_secs_f64());
        if exact && !o.pass {
            exact_failures.push(id);
        }
    };
    line(1, "gaussian calibration", true, &mut gaussian_calibration);
    line(2, "accountant golden values and monotonicity", true, &mut accountant_golden);
    line(3, "finite-difference gradients", true, &mut gradient_checks);
    line(4, "metric oracle equivalence", true, &mut metric_oracles);
    line(5, "outlier gap bound", true, &mut gap_bound);
    let mut outlier_dir = None;
    line(6, "outlier and novelty detection trend", false, &mut || {
        let (o, d) = outlier_trend();
        outlier_dir = Some(d);
        o
    });
    line(7, "backdoor defense", false, &mut backdoor_defense);
    line(8, "sequence false-negative reduction", false, &mut sequence_fn_reduction);
    line(9, "uaerm gap direction", false, &mut uaerm_direction);
    let dir = outlier_dir.expect("outlier experiment ran");
    line(10, "manifest rerun is byte-identical", true, &mut || manifest_rerun(&dir));
    assert!(exact_failures.is_empty(), "exact criteria failed: {exact_failures:?}");
}
