//! Performance measures over replicated estimates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub bias: f64,
    pub variance: f64,
    pub mse: f64,
}

/// One (scenario, MT size, method) cell of a study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub scenario: String,
    pub mt_size: usize,
    pub method: String,
    pub bias: f64,
    pub variance: f64,
    pub mse: f64,
    /// Mean ESS over the replications that produced one; NaN if none did.
    pub ess: f64,
    pub n_used: usize,
    pub n_failed: usize,
}

/// Absolute bias of the mean, sample variance (n - 1 denominator) and MSE
/// around `theta0`.
pub fn summarize(estimates: &[f64], theta0: f64) -> Result<Summary> {
    if estimates.len() < 2 {
        return Err(Error::Argument(format!(
            "summaries need at least two estimates, got {}",
            estimates.len()
        )));
    }
    let n = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / n;
    let variance = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let mse = estimates.iter().map(|e| (e - theta0).powi(2)).sum::<f64>() / n;
    Ok(Summary {
        bias: (mean - theta0).abs(),
        variance,
        mse,
    })
}

/// Kish effective sample size `(sum w)^2 / sum w^2` of historical weights.
pub fn ess_frequentist(weights: &[f64]) -> Result<f64> {
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::Argument("weights must be finite and nonnegative".into()));
    }
    let sum: f64 = weights.iter().sum();
    let sum_sq: f64 = weights.iter().map(|w| w * w).sum();
    if sum_sq == 0.0 {
        return Err(Error::Argument("effective sample size of all-zero weights".into()));
    }
    Ok(sum * sum / sum_sq)
}

/// Variance-ratio ESS anchored at the non-borrowing posterior:
/// `n_current * var_nb / var_method`.
pub fn ess_bayesian(var_method: f64, var_nb: f64, n_current: usize) -> Result<f64> {
    if !(var_method > 0.0 && var_nb > 0.0) {
        return Err(Error::Argument(format!(
            "posterior variances must be positive (method {var_method}, NB {var_nb})"
        )));
    }
    Ok(n_current as f64 * var_nb / var_method)
}
