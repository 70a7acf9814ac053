use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of a Gaussian mechanism: L2 sensitivity and the target
/// `(epsilon, delta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanismSpec {
    pub sensitivity: f64,
    pub epsilon: f64,
    pub delta: f64,
}

/// Minimum Gaussian noise scale `(sensitivity / eps) * sqrt(2 ln(1.25 / delta))`.
/// The closed form only holds for `eps` in (0, 1).
pub fn gaussian_sigma(spec: &MechanismSpec) -> Result<f64> {
    let MechanismSpec { sensitivity, epsilon, delta } = *spec;
    if !(sensitivity > 0.0 && sensitivity.is_finite()) {
        return Err(Error::Domain(format!("sensitivity must be positive, got {sensitivity}")));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Domain(format!("closed form needs epsilon in (0, 1), got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("delta must be in (0, 1), got {delta}")));
    }
    Ok(sensitivity / epsilon * (2.0 * (1.25 / delta).ln()).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(sensitivity: f64, epsilon: f64) -> MechanismSpec {
        MechanismSpec { sensitivity, epsilon, delta: 1e-5 }
    }

    #[test]
    fn reference_value() {
        let s = gaussian_sigma(&spec(1.0, 0.5)).unwrap();
        assert!((s - 9.689610525210779).abs() < 1e-9);
    }

    #[test]
    fn linear_in_sensitivity_and_decreasing_in_epsilon() {
        let one = gaussian_sigma(&spec(1.0, 0.3)).unwrap();
        assert_eq!(gaussian_sigma(&spec(2.0, 0.3)).unwrap(), 2.0 * one);
        let mut prev = f64::INFINITY;
        for i in 1..100 {
            let s = gaussian_sigma(&spec(1.0, i as f64 / 100.0)).unwrap();
            assert!(s < prev);
            prev = s;
        }
    }

    #[test]
    fn epsilon_outside_unit_interval_is_a_domain_error() {
        assert!(matches!(gaussian_sigma(&spec(1.0, 1.0)), Err(Error::Domain(_))));
        assert!(matches!(gaussian_sigma(&spec(1.0, 0.0)), Err(Error::Domain(_))));
    }
}
