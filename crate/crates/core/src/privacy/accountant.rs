//! Rényi-divergence (log-moment) accountant for the subsampled Gaussian
//! mechanism, composed over training steps and converted to `(eps, delta)`.

use serde::{Deserialize, Serialize};

/// Orders the accountant minimizes over: 1.25, 1.5, 1.75 and 2..=64.
pub fn default_orders() -> Vec<f64> {
    let mut orders = vec![1.25, 1.5, 1.75];
    orders.extend((2..=64).map(f64::from));
    orders
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountantState {
    /// Sampling rate `B / N`.
    pub q: f64,
    pub sigma: f64,
    pub steps: u64,
    pub delta: f64,
    #[serde(default = "default_orders")]
    pub orders: Vec<f64>,
}

impl AccountantState {
    pub fn new(q: f64, sigma: f64, delta: f64) -> Self {
        Self { q, sigma, steps: 0, delta, orders: default_orders() }
    }

    pub fn step(&mut self) {
        self.steps += 1;
    }

    pub fn epsilon(&self) -> f64 {
        accountant_epsilon(self)
    }
}

/// `ln A_alpha` for integer `alpha`, where
/// `A_alpha = sum_k C(alpha,k) (1-q)^(alpha-k) q^k exp(k(k-1) / (2 sigma^2))`.
fn log_moment_int(q: f64, sigma: f64, alpha: u32) -> f64 {
    if q >= 1.0 {
        let a = f64::from(alpha);
        return a * (a - 1.0) / (2.0 * sigma * sigma);
    }
    let (lq, l1q) = (q.ln(), (-q).ln_1p());
    let mut log_binom = 0.0;
    let mut terms = Vec::with_capacity(alpha as usize + 1);
    for k in 0..=alpha {
        if k > 0 {
            log_binom += (f64::from(alpha - k + 1) / f64::from(k)).ln();
        }
        let (kf, af) = (f64::from(k), f64::from(alpha));
        terms.push(log_binom + (af - kf) * l1q + kf * lq + kf * (kf - 1.0) / (2.0 * sigma * sigma));
    }
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Per-step Rényi divergence bound of the subsampled Gaussian at order
/// `alpha`: `ln(A_alpha) / (alpha - 1)`. Fractional orders interpolate
/// `ln A` linearly between the integer neighbours (`ln A_1 = 0`); `ln A` is
/// convex in the order, so the interpolant stays an upper bound.
pub fn rdp_subsampled_gaussian(q: f64, sigma: f64, alpha: f64) -> f64 {
    if q <= 0.0 {
        return 0.0;
    }
    if sigma <= 0.0 {
        return f64::INFINITY;
    }
    let lo = alpha.floor();
    let log_a = if lo == alpha {
        log_moment_int(q, sigma, alpha as u32)
    } else {
        let la = if lo <= 1.0 { 0.0 } else { log_moment_int(q, sigma, lo as u32) };
        let lb = log_moment_int(q, sigma, lo as u32 + 1);
        (lo + 1.0 - alpha) * la + (alpha - lo) * lb
    };
    (log_a / (alpha - 1.0)).max(0.0)
}

/// `eps = min over orders of steps * rdp(alpha) + ln(1/delta) / (alpha - 1)`.
/// Orders whose bound overflows are skipped; if none survive, `+inf`.
pub fn accountant_epsilon(state: &AccountantState) -> f64 {
    if state.steps == 0 {
        return 0.0;
    }
    let steps = state.steps as f64;
    let log_inv_delta = (1.0 / state.delta).ln();
    state
        .orders
        .iter()
        .filter(|&&a| a > 1.0)
        .map(|&a| steps * rdp_subsampled_gaussian(state.q, state.sigma, a) + log_inv_delta / (a - 1.0))
        .filter(|e| e.is_finite())
        .fold(f64::INFINITY, f64::min)
}
