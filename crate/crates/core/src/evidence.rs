//! Single-run lower bounds on the log Bayes factor between the zero-order
//! (`eta = 0`) and first-order (`eta > 0`) processes.
//!
//! Each stored iteration carries the conditional log-odds
//! `log P(eta > 0 | X, rest) - log P(eta = 0 | X, rest)`. Averaging these over
//! the chain estimates `E[log odds | X]`, the quantity reported as a lower
//! bound on the log Bayes factor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{batch_means_se, log_sum_exp, mean};

/// Quadrature nodes used to integrate the slab.
pub const SLAB_GRID: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Evidence for `eta > 0` over `eta = 0`.
    Order1VsOrder0,
    /// Evidence for `eta = 0` over `eta > 0`.
    Order0VsOrder1,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Order1VsOrder0 => 1.0,
            Direction::Order0VsOrder1 => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundEstimate {
    pub direction: Direction,
    pub estimate: f64,
    pub std_error: f64,
    pub n_iterations: usize,
}

/// Averages per-iteration log-odds (oriented as order 1 over order 0) in the
/// requested direction. The standard error uses batch means.
pub fn bf_lower_bound(log_odds: &[f64], direction: Direction) -> Result<BoundEstimate> {
    if log_odds.is_empty() {
        return Err(Error::Argument("empty log-odds trace".into()));
    }
    if log_odds.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("log-odds trace contains non-finite values".into()));
    }
    let sign = direction.sign();
    let oriented: Vec<f64> = log_odds.iter().map(|v| sign * v).collect();
    Ok(BoundEstimate {
        direction,
        estimate: mean(&oriented),
        std_error: batch_means_se(&oriented),
        n_iterations: log_odds.len(),
    })
}

/// Conditional log-odds of the slab against the spike for equal prior
/// weights: `log mean_k exp(ell(u_k * eta_max)) - ell(0)` with midpoints
/// `u_k = (k - 1/2) / grid`. `ell` is the eta-dependent log-likelihood.
pub fn slab_log_odds<F: FnMut(f64) -> f64>(mut ell: F, eta_max: f64, grid: usize) -> f64 {
    let base = ell(0.0);
    let values: Vec<f64> = (0..grid)
        .map(|k| ell((k as f64 + 0.5) / grid as f64 * eta_max))
        .collect();
    log_sum_exp(&values) - (grid as f64).ln() - base
}
