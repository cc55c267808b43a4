use nalgebra::{DMatrix, DVector};

use super::{aft_to_loghr, validate_samples, Design, FitResult, SurvivalModel, SurvivalSample};
use crate::error::FitError;
use crate::optim::{self, Evaluation, NewtonOptions};

/// Log-time regression `log T = x'b + sigma W` with W standard minimum
/// extreme value. Parameters are `[intercept, covariates..., log sigma]`.
struct AftData<'a> {
    samples: &'a [SurvivalSample],
    design: Design,
    log_times: Vec<f64>,
}

impl AftData<'_> {
    fn row(&self, s: &SurvivalSample) -> [f64; 4] {
        let r = self.design.row(s);
        [1.0, r[0], r[1], r[2]]
    }

    fn evaluate(&self, theta: &[f64]) -> Option<Evaluation> {
        let k = self.design.width() + 1;
        let log_sigma = theta[k];
        let sigma = log_sigma.exp();
        if !(sigma.is_finite() && sigma > 0.0) {
            return None;
        }
        let mut value = 0.0;
        let mut gradient = DVector::zeros(k + 1);
        let mut hessian = DMatrix::zeros(k + 1, k + 1);
        for (s, &y) in self.samples.iter().zip(&self.log_times) {
            let w = s.weight;
            if w == 0.0 {
                continue;
            }
            let x = self.row(s);
            let mu: f64 = (0..k).map(|j| x[j] * theta[j]).sum();
            let z = (y - mu) / sigma;
            let ez = z.exp();
            if !ez.is_finite() {
                return None;
            }
            let delta = if s.event { 1.0 } else { 0.0 };
            value += w * (delta * (z - log_sigma) - ez);
            // derivatives in z
            let lz = delta - ez;
            let lzz = -ez;
            for a in 0..k {
                gradient[a] += w * (-lz * x[a] / sigma);
                for b in 0..k {
                    hessian[(a, b)] += w * lzz * x[a] * x[b] / (sigma * sigma);
                }
                let cross = w * x[a] / sigma * (lzz * z + lz);
                hessian[(a, k)] += cross;
                hessian[(k, a)] += cross;
            }
            gradient[k] += w * (-delta - z * lz);
            hessian[(k, k)] += w * (z * lz + z * z * lzz);
        }
        value.is_finite().then_some(Evaluation {
            value,
            gradient,
            hessian,
        })
    }
}

/// Weighted log-likelihood of the log times at `theta` (Jacobian term of the
/// time transform omitted).
pub fn aft_log_likelihood(samples: &[SurvivalSample], design: Design, theta: &[f64]) -> f64 {
    let data = AftData {
        samples,
        design,
        log_times: samples.iter().map(|s| s.time.ln()).collect(),
    };
    data.evaluate(theta).map_or(f64::NEG_INFINITY, |e| e.value)
}

/// Weighted censored maximum likelihood for the Weibull AFT model. The
/// treatment coefficient is reported on the log hazard ratio scale.
pub fn fit_weibull_aft_weighted(samples: &[SurvivalSample], design: Design) -> Result<FitResult, FitError> {
    validate_samples(samples)?;
    let data = AftData {
        samples,
        design,
        log_times: samples.iter().map(|s| s.time.ln()).collect(),
    };
    let k = design.width() + 1;
    let total_w: f64 = samples.iter().map(|s| s.weight).sum();
    let mean = samples.iter().zip(&data.log_times).map(|(s, y)| s.weight * y).sum::<f64>() / total_w;
    let var = samples
        .iter()
        .zip(&data.log_times)
        .map(|(s, y)| s.weight * (y - mean).powi(2))
        .sum::<f64>()
        / total_w;
    let sd = (var.sqrt() * 6f64.sqrt() / std::f64::consts::PI).max(1e-3);
    let mut start = DVector::zeros(k + 1);
    start[0] = mean;
    start[k] = sd.ln();

    let result = optim::maximize(start, |theta| data.evaluate(theta.as_slice()), NewtonOptions::default())?;
    let sigma = result.estimate[k].exp();
    if sigma < 1e-6 {
        return Err(FitError::DegenerateScale { sigma });
    }
    let coefficients: Vec<f64> = result.estimate.iter().take(k).copied().collect();
    Ok(FitResult {
        model: SurvivalModel::Aft,
        log_hr: aft_to_loghr(coefficients[1], sigma)?,
        coefficients,
        scale: Some(sigma),
        shape: Some(sigma.recip()),
        iterations: result.iterations,
    })
}
