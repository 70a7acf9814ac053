use serde::{Deserialize, Serialize};

use crate::error::{input_err, Result};

/// Inputs of the outlier loss-gap lower bound. The loss is assumed bounded
/// in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapBoundInputs {
    /// Loss gap separating outliers from the population expectation.
    pub t: f64,
    /// Uniform convergence rate of the learning algorithm.
    pub xi: f64,
    /// Clean sample count.
    pub n: u64,
    pub epsilon: f64,
    pub delta: f64,
    /// Number of outliers mixed into the training set.
    pub c: u64,
    /// Failure probability.
    pub gamma: f64,
}

/// `T - 2(xi + sqrt(n (e^eps - 1 + delta)^2 / 2 * ln(2/gamma)) + e^(c eps) - 1 + c e^(c eps) delta)`.
///
/// Returned as-is even when negative (the bound is then vacuous).
pub fn outlier_gap_bound(i: &GapBoundInputs) -> f64 {
    let n = i.n as f64;
    let c = i.c as f64;
    let slack = i.epsilon.exp_m1() + i.delta;
    let concentration = (n * slack * slack / 2.0 * (2.0 / i.gamma).ln()).sqrt();
    let group = (c * i.epsilon).exp_m1() + c * (c * i.epsilon).exp() * i.delta;
    i.t - 2.0 * (i.xi + concentration + group)
}

/// Per-test-sample losses of the averaged randomized models against the
/// oracle model, with their largest absolute difference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UaermMeasurement {
    pub avg_losses: Vec<f64>,
    pub oracle_losses: Vec<f64>,
    pub gap: f64,
}

impl UaermMeasurement {
    pub fn new(avg_losses: Vec<f64>, oracle_losses: Vec<f64>) -> Result<Self> {
        let gap = uaerm_gap(&avg_losses, &oracle_losses)?;
        Ok(Self { avg_losses, oracle_losses, gap })
    }
}

/// `max_u |avg[u] - oracle[u]|` over a shared test set.
pub fn uaerm_gap(avg_losses: &[f64], oracle_losses: &[f64]) -> Result<f64> {
    if avg_losses.len() != oracle_losses.len() {
        return input_err(format!("loss vectors differ in length: {} vs {}", avg_losses.len(), oracle_losses.len()));
    }
    if avg_losses.iter().chain(oracle_losses).any(|v| !v.is_finite()) {
        return input_err("loss vectors must be finite");
    }
    Ok(avg_losses.iter().zip(oracle_losses).map(|(a, o)| (a - o).abs()).fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn inputs() -> GapBoundInputs {
        GapBoundInputs { t: 1.0, xi: 0.1, n: 100, epsilon: 0.01, delta: 1e-5, c: 1, gamma: 0.05 }
    }

    #[test]
    fn origin_returns_t() {
        for (n, c, gamma) in [(1, 0, 0.5), (10_000, 50, 0.01)] {
            let i = GapBoundInputs { t: 0.37, xi: 0.0, n, epsilon: 0.0, delta: 0.0, c, gamma };
            assert_eq!(outlier_gap_bound(&i), 0.37);
        }
    }

    #[test]
    fn reference_point() {
        // 50-digit evaluation: 0.50662490151607165...
        assert!((outlier_gap_bound(&inputs()) - 0.506624901516).abs() < 1e-10);
    }

    #[test]
    fn may_go_negative() {
        let i = GapBoundInputs { epsilon: 2.0, ..inputs() };
        assert!(outlier_gap_bound(&i) < 0.0);
    }

    #[test]
    fn uaerm_gap_examples() {
        assert!((uaerm_gap(&[0.5, 0.2], &[0.1, 0.3]).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(uaerm_gap(&[0.3, 0.1], &[0.3, 0.1]).unwrap(), 0.0);
        assert!(uaerm_gap(&[0.3], &[0.3, 0.1]).is_err());
    }

    proptest! {
        #[test]
        fn bound_non_increasing_in_c(c in 0u64..200, eps in 0.0f64..0.5, delta in 0.0f64..0.01) {
            let a = GapBoundInputs { c, epsilon: eps, delta, ..inputs() };
            let b = GapBoundInputs { c: c + 1, ..a };
            prop_assert!(outlier_gap_bound(&b) <= outlier_gap_bound(&a));
        }

        #[test]
        fn uaerm_gap_permutation_invariant(v in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..30), rot in 0usize..30) {
            let (a, o): (Vec<f64>, Vec<f64>) = v.iter().copied().unzip();
            let k = rot % a.len();
            let (mut ar, mut or) = (a.clone(), o.clone());
            ar.rotate_left(k);
            or.rotate_left(k);
            prop_assert_eq!(uaerm_gap(&a, &o).unwrap(), uaerm_gap(&ar, &or).unwrap());
        }
    }
}
