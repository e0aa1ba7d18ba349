//! Rényi differential privacy accounting for subsampled Gaussian mechanisms.
//!
//! One training step with Poisson sampling rate `q` and noise multiplier
//! `sigma` has, at integer Rényi order `a >= 2`,
//!
//! ```text
//! eps_rdp(a) = ln( sum_{k=0..a} C(a,k) (1-q)^(a-k) q^k exp((k^2 - k) / (2 sigma^2)) ) / (a - 1)
//! ```
//!
//! evaluated entirely in log space so that large `k^2 / sigma^2` exponents
//! cannot overflow. For `q = 1` the curve is the plain Gaussian one,
//! `a / (2 sigma^2)`. Composition over `t` identical steps scales the curve
//! pointwise; conversion to `(epsilon, delta)` takes the minimum over orders
//! of `t * eps_rdp(a) + ln(1/delta) / (a - 1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest noise multiplier the calibration search will consider.
pub const SIGMA_MIN: f64 = 0.3;
/// Largest noise multiplier the calibration search will consider.
pub const SIGMA_MAX: f64 = 50.0;
/// Calibration terminates when the achieved epsilon is within this distance
/// below the target.
pub const CALIBRATION_TOLERANCE: f64 = 1e-3;

/// Target `(epsilon, delta)` guarantee.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        let budget = Self { epsilon, delta };
        budget.validate()?;
        Ok(budget)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "epsilon {} must be positive and finite",
                self.epsilon
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "delta {} must lie in (0, 1)",
                self.delta
            )));
        }
        Ok(())
    }
}

/// Per-step Rényi divergence bound at each evaluated order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdpCurve {
    pub orders: Vec<f64>,
    pub eps: Vec<f64>,
}

/// Mechanism parameters that realize a budget for one training phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpSgdConfig {
    pub noise_multiplier: f64,
    pub clip_norm: f64,
    pub sampling_rate: f64,
    pub steps: u64,
}

/// The integer order grid used throughout: every order in `2..=64`.
pub fn default_orders() -> Vec<u64> {
    (2..=64).collect()
}

/// `ln(n choose k)` from a log-factorial table; exact to a few ulps for the
/// order range used here.
fn ln_binomial(n: u64, k: u64, ln_fact: &[f64]) -> f64 {
    ln_fact[n as usize] - ln_fact[k as usize] - ln_fact[(n - k) as usize]
}

fn ln_factorial_table(max_n: u64) -> Vec<f64> {
    let mut table = vec![0.0; max_n as usize + 1];
    for i in 2..=max_n as usize {
        table[i] = table[i - 1] + (i as f64).ln();
    }
    table
}

/// Numerically stable `ln(sum of exp(terms))`.
fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    max + sum.ln()
}

/// Rényi divergence bound of a single subsampled Gaussian step at the given
/// integer orders.
pub fn rdp_of_step(sampling_rate: f64, noise_multiplier: f64, orders: &[u64]) -> Result<RdpCurve> {
    if !(sampling_rate > 0.0 && sampling_rate <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "sampling rate {sampling_rate} must lie in (0, 1]"
        )));
    }
    if !noise_multiplier.is_finite() || noise_multiplier <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "noise multiplier {noise_multiplier} must be positive and finite"
        )));
    }
    if orders.is_empty() {
        return Err(Error::InvalidConfig("empty order list".into()));
    }
    if let Some(&bad) = orders.iter().find(|&&a| a < 2) {
        return Err(Error::InvalidConfig(format!(
            "Rényi order {bad} below 2 is not supported"
        )));
    }

    let sigma2 = noise_multiplier * noise_multiplier;
    let max_order = *orders.iter().max().expect("non-empty");
    let ln_fact = ln_factorial_table(max_order);

    let eps = orders
        .iter()
        .map(|&a| {
            if sampling_rate == 1.0 {
                return a as f64 / (2.0 * sigma2);
            }
            let ln_q = sampling_rate.ln();
            let ln_1q = (-sampling_rate).ln_1p();
            let terms: Vec<f64> = (0..=a)
                .map(|k| {
                    ln_binomial(a, k, &ln_fact)
                        + k as f64 * ln_q
                        + (a - k) as f64 * ln_1q
                        + (k * k - k) as f64 / (2.0 * sigma2)
                })
                .collect();
            log_sum_exp(&terms) / (a as f64 - 1.0)
        })
        .collect();

    Ok(RdpCurve {
        orders: orders.iter().map(|&a| a as f64).collect(),
        eps,
    })
}

/// Compose a per-step curve over `steps` identical steps and convert to an
/// `(epsilon, delta)` guarantee. Returns the epsilon together with the order
/// attaining the minimum.
pub fn compose_and_convert(curve: &RdpCurve, steps: u64, delta: f64) -> Result<(f64, f64)> {
    if curve.orders.is_empty() || curve.orders.len() != curve.eps.len() {
        return Err(Error::InvalidConfig(
            "curve orders and eps must be non-empty and equally long".into(),
        ));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "delta {delta} must lie in (0, 1)"
        )));
    }
    let ln_inv_delta = (1.0 / delta).ln();
    let mut best: Option<(f64, f64)> = None;
    for (&order, &eps_step) in curve.orders.iter().zip(&curve.eps) {
        let candidate = steps as f64 * eps_step + ln_inv_delta / (order - 1.0);
        match best {
            Some((eps, _)) if eps <= candidate => {}
            _ => best = Some((candidate, order)),
        }
    }
    Ok(best.expect("non-empty curve"))
}

/// Achieved epsilon of a run with the given mechanism parameters.
pub fn achieved_epsilon(
    sampling_rate: f64,
    noise_multiplier: f64,
    steps: u64,
    delta: f64,
) -> Result<(f64, f64)> {
    let curve = rdp_of_step(sampling_rate, noise_multiplier, &default_orders())?;
    compose_and_convert(&curve, steps, delta)
}

/// Smallest noise multiplier in `[SIGMA_MIN, SIGMA_MAX]` whose achieved
/// epsilon over `steps` steps is at or below the target, found by bisection
/// until the achieved value is within [`CALIBRATION_TOLERANCE`] of the target.
pub fn calibrate_noise(budget: &PrivacyBudget, sampling_rate: f64, steps: u64) -> Result<f64> {
    budget.validate()?;
    let eps_at = |sigma: f64| -> Result<f64> {
        Ok(achieved_epsilon(sampling_rate, sigma, steps, budget.delta)?.0)
    };
    let eps_lo = eps_at(SIGMA_MIN)?;
    let eps_hi = eps_at(SIGMA_MAX)?;
    if eps_lo <= budget.epsilon || eps_hi > budget.epsilon {
        return Err(Error::Calibration(format!(
            "target epsilon {} not bracketed on sigma [{SIGMA_MIN}, {SIGMA_MAX}]: \
             endpoint epsilons are {eps_lo} and {eps_hi}",
            budget.epsilon
        )));
    }
    let mut lo = SIGMA_MIN;
    let mut hi = SIGMA_MAX;
    let mut achieved_hi = eps_hi;
    for _ in 0..200 {
        if budget.epsilon - achieved_hi <= CALIBRATION_TOLERANCE {
            return Ok(hi);
        }
        let mid = 0.5 * (lo + hi);
        let eps_mid = eps_at(mid)?;
        if eps_mid > budget.epsilon {
            lo = mid;
        } else {
            hi = mid;
            achieved_hi = eps_mid;
        }
    }
    Err(Error::Calibration(format!(
        "bisection did not converge to within {CALIBRATION_TOLERANCE} of epsilon {}",
        budget.epsilon
    )))
}

/// Split a budget into `k` equal shares `(epsilon / k, delta / k)` for
/// sequential composition across training phases.
pub fn split_budget(budget: &PrivacyBudget, k: u32) -> Result<PrivacyBudget> {
    budget.validate()?;
    if k == 0 {
        return Err(Error::InvalidConfig("cannot split a budget 0 ways".into()));
    }
    Ok(PrivacyBudget {
        epsilon: budget.epsilon / k as f64,
        delta: budget.delta / k as f64,
    })
}
