//! Independent reference implementations the acceptance suite compares
//! against. Deliberately naive: quadratic loops, no shared code with the
//! library beyond its public types.

#![allow(dead_code)]

use dpad_core::metrics::{Direction, ScoreRecord};
use dpad_core::nn::{forward_loss, per_example_gradients, LossKind, Model, Sample};

/// `P(pos > neg) + P(pos == neg) / 2` over every positive/negative pair.
pub fn pairwise_auroc(records: &[ScoreRecord]) -> f64 {
    let s = |r: &ScoreRecord| match r.direction {
        Direction::HigherIsAnomalous => r.score,
        Direction::LowerIsAnomalous => -r.score,
    };
    let pos: Vec<f64> = records.iter().filter(|r| r.positive).map(s).collect();
    let neg: Vec<f64> = records.iter().filter(|r| !r.positive).map(s).collect();
    let mut twice = 0u64;
    for p in &pos {
        for n in &neg {
            twice += if p > n {
                2
            } else if p == n {
                1
            } else {
                0
            };
        }
    }
    twice as f64 / (2 * pos.len() * neg.len()) as f64
}

/// Average precision by threshold enumeration: for every distinct score,
/// flag everything at least as anomalous, then weight that precision by
/// the recall gained since the previous threshold.
pub fn enumerated_aupr(records: &[ScoreRecord]) -> f64 {
    let s = |r: &ScoreRecord| match r.direction {
        Direction::HigherIsAnomalous => r.score,
        Direction::LowerIsAnomalous => -r.score,
    };
    let mut thresholds: Vec<f64> = records.iter().map(s).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let total_pos = records.iter().filter(|r| r.positive).count() as f64;
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for t in thresholds {
        let flagged: Vec<&ScoreRecord> = records.iter().filter(|r| s(r) >= t).collect();
        let tp = flagged.iter().filter(|r| r.positive).count() as f64;
        let recall = tp / total_pos;
        ap += (recall - prev_recall) * (tp / flagged.len() as f64);
        prev_recall = recall;
    }
    ap
}

/// Largest elementwise relative error between the analytic gradient and a
/// central difference, over the given parameter indices, plus the number of
/// indices that needed a smaller step. The first step is `1e-5`; a
/// coordinate that misses the tolerance is retried at `1e-6` and `1e-7`,
/// since a step that crosses a ReLU or max-pool kink gives a meaningless
/// difference while a wrong gradient misses at every step. The denominator
/// is floored at `1e-6` so exact zeros compare absolutely.
pub fn finite_difference_error(
    model: &Model,
    sample: &Sample,
    kind: LossKind,
    coords: &[usize],
    tol: f64,
) -> (f64, usize) {
    let grads = per_example_gradients(model, std::slice::from_ref(sample), kind).expect("gradient");
    let analytic = grads.row(0);
    let mut m = model.clone();
    let mut worst: f64 = 0.0;
    let mut retried = 0;
    for &j in coords {
        let orig = m.params()[j];
        let mut best = f64::INFINITY;
        for (attempt, h) in [1e-5, 1e-6, 1e-7].into_iter().enumerate() {
            m.params_mut()[j] = orig + h;
            let up = forward_loss(&m, sample, kind).expect("loss");
            m.params_mut()[j] = orig - h;
            let down = forward_loss(&m, sample, kind).expect("loss");
            m.params_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let rel = (numeric - analytic[j]).abs() / numeric.abs().max(analytic[j].abs()).max(1e-6);
            best = best.min(rel);
            if best <= tol {
                retried += usize::from(attempt > 0);
                break;
            }
        }
        worst = worst.max(best);
    }
    (worst, retried)
}

/// `(Delta / eps) * sqrt(2 ln(1.25 / delta))` with the logarithm split as
/// `ln 1.25 - ln delta` and `ln delta` built from `ln 10` for powers of ten.
pub fn gaussian_sigma_reference(sensitivity: f64, epsilon: f64, delta_exp10: i32) -> f64 {
    let ln_inv_delta = -(delta_exp10 as f64) * std::f64::consts::LN_10;
    let ln = 1.25f64.ln() + ln_inv_delta;
    sensitivity / epsilon * (2.0 * ln).sqrt()
}

/// The gap bound written out term by term.
pub fn gap_bound_reference(t: f64, xi: f64, n: f64, eps: f64, delta: f64, c: f64, gamma: f64) -> f64 {
    let e = eps.exp() - 1.0 + delta;
    let concentration = (n * e * e / 2.0 * (2.0 / gamma).ln()).sqrt();
    let group = (c * eps).exp() - 1.0 + c * (c * eps).exp() * delta;
    t - 2.0 * (xi + concentration + group)
}
