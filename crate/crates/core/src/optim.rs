//! Damped Newton ascent for smooth log-likelihoods of a few parameters.

use nalgebra::{DMatrix, DVector};

use crate::error::FitError;

pub(crate) struct Evaluation {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct NewtonOptions {
    pub max_iter: usize,
    /// Converged once the accepted step is below this in max-norm.
    pub step_tolerance: f64,
    /// Parameter norm beyond which the maximum is taken to be at infinity.
    pub divergence_limit: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            max_iter: 200,
            step_tolerance: 1e-10,
            divergence_limit: 1e3,
        }
    }
}

pub(crate) struct NewtonResult {
    pub estimate: DVector<f64>,
    pub iterations: usize,
}

/// Newton direction of ascent; falls back to a Levenberg-damped system when
/// the Hessian is not negative definite.
fn ascent_direction(eval: &Evaluation) -> Option<DVector<f64>> {
    let neg_h = -&eval.hessian;
    if let Some(ch) = neg_h.clone().cholesky() {
        return Some(ch.solve(&eval.gradient));
    }
    let n = eval.gradient.len();
    let mut lambda = 1e-6 * (1.0 + neg_h.diagonal().amax());
    for _ in 0..60 {
        let damped = &neg_h + DMatrix::identity(n, n) * lambda;
        if let Some(ch) = damped.cholesky() {
            return Some(ch.solve(&eval.gradient));
        }
        lambda *= 10.0;
    }
    None
}

/// A vanishing curvature at the stopping point means the objective flattened
/// out on its way to infinity, not a proper maximum.
fn check_curvature(eval: &Evaluation) -> Result<(), FitError> {
    if eval.hessian.diagonal().iter().any(|h| -h < 1e-10) {
        return Err(FitError::Monotone);
    }
    Ok(())
}

/// `evaluate` returns `None` where the objective is undefined (overflow);
/// such points are treated as worse than any finite value.
pub(crate) fn maximize<F>(start: DVector<f64>, evaluate: F, options: NewtonOptions) -> Result<NewtonResult, FitError>
where
    F: Fn(&DVector<f64>) -> Option<Evaluation>,
{
    let mut theta = start;
    let mut current = evaluate(&theta).ok_or_else(|| FitError::Invalid("objective undefined at start".into()))?;
    for iteration in 0..options.max_iter {
        let direction = ascent_direction(&current).ok_or(FitError::Singular)?;
        if !direction.iter().all(|d| d.is_finite()) {
            return Err(FitError::Singular);
        }
        let mut scale = 1.0;
        let accepted = loop {
            let candidate = &theta + &direction * scale;
            if let Some(eval) = evaluate(&candidate) {
                if eval.value.is_finite() && eval.value >= current.value - 1e-12 * current.value.abs().max(1.0) {
                    break Some((candidate, eval));
                }
            }
            scale *= 0.5;
            if scale < 1e-12 {
                break None;
            }
        };
        let Some((candidate, eval)) = accepted else {
            // no ascent possible along the Newton direction: at the optimum
            // up to rounding
            check_curvature(&current)?;
            return Ok(NewtonResult {
                estimate: theta,
                iterations: iteration,
            });
        };
        let step = (&direction * scale).amax();
        theta = candidate;
        current = eval;
        if theta.norm() > options.divergence_limit {
            return Err(FitError::Monotone);
        }
        if step < options.step_tolerance {
            check_curvature(&current)?;
            return Ok(NewtonResult {
                estimate: theta,
                iterations: iteration + 1,
            });
        }
    }
    Err(FitError::NoConverge {
        iterations: options.max_iter,
    })
}
