//! Logistic propensity models and inverse-probability weights.
//!
//! Propensity here is the probability of current-trial (MT) membership given
//! covariates, fitted against historical controls. Historical subjects get
//! weight `ps / (1 - ps)`; MT and MC subjects keep weight 1.

use nalgebra::{DMatrix, DVector};

use crate::datagen::{Source, TrialData, N_COVARIATES};
use crate::error::{FitError, Result};
use crate::weights::{WeightMethod, WeightSet};

/// Covariates (1-based) with the largest outcome coefficients are left out of
/// the propensity model to mimic unmeasured confounding.
pub const MEASURED_COVARIATES: usize = 10;
const PS_CLAMP: f64 = 1e-6;
const COEF_LIMIT: f64 = 1e3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogisticOptions {
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        LogisticOptions {
            tolerance: 1e-8,
            max_iter: 100,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PsOptions {
    /// Use all 13 covariates instead of the first ten.
    pub full_ps_model: bool,
    pub logistic: LogisticOptions,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogisticModel {
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
}

fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

fn log_likelihood(design: &DMatrix<f64>, labels: &[f64], beta: &DVector<f64>) -> f64 {
    let eta = design * beta;
    eta.iter()
        .zip(labels)
        .map(|(&e, &y)| {
            // log(1 + exp(e)) computed stably
            let log1pexp = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
            y * e - log1pexp
        })
        .sum()
}

impl LogisticModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        sigmoid(self.coefficients.iter().zip(row).map(|(b, x)| b * x).sum())
    }

    pub fn predict(&self, design: &DMatrix<f64>) -> Vec<f64> {
        let beta = DVector::from_column_slice(&self.coefficients);
        (design * beta).iter().map(|&e| sigmoid(e)).collect()
    }
}

/// Maximum-likelihood logistic regression by iteratively reweighted least squares.
pub fn fit_logistic(design: &DMatrix<f64>, labels: &[f64], options: LogisticOptions) -> Result<LogisticModel, FitError> {
    let (n, k) = design.shape();
    if labels.len() != n {
        return Err(FitError::Invalid(format!("{} labels for {n} rows", labels.len())));
    }
    if n <= k {
        return Err(FitError::Invalid(format!("need more rows ({n}) than columns ({k})")));
    }
    let positives = labels.iter().filter(|&&y| y == 1.0).count();
    if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(FitError::Invalid("labels must be 0 or 1".into()));
    }
    if positives == 0 || positives == n {
        return Err(FitError::Separation);
    }

    let y = DVector::from_column_slice(labels);
    let mut beta = DVector::zeros(k);
    let mut loglik = log_likelihood(design, labels, &beta);
    for iteration in 0..options.max_iter {
        let eta = design * &beta;
        let p = eta.map(sigmoid);
        let gradient = design.transpose() * (&y - &p);
        let gradient_norm = gradient.amax();
        if gradient_norm < options.tolerance {
            // every point classified with a wide margin: the maximum is at infinity
            let margin = eta.iter().zip(labels).map(|(e, &y)| if y == 1.0 { *e } else { -e }).fold(f64::INFINITY, f64::min);
            if margin > 10.0 {
                return Err(FitError::Separation);
            }
            return Ok(LogisticModel {
                coefficients: beta.iter().copied().collect(),
                converged: true,
                iterations: iteration,
                gradient_norm,
            });
        }
        let w = p.map(|v| (v * (1.0 - v)).max(1e-12));
        let mut weighted = design.clone();
        for (mut row, wi) in weighted.row_iter_mut().zip(w.iter()) {
            row *= *wi;
        }
        let information = design.transpose() * weighted;
        let step = information.cholesky().ok_or(FitError::Singular)?.solve(&gradient);

        // step halving keeps the likelihood monotone
        let mut scale = 1.0;
        let mut candidate = &beta + &step;
        let mut candidate_ll = log_likelihood(design, labels, &candidate);
        while candidate_ll < loglik - 1e-12 && scale > 1e-8 {
            scale *= 0.5;
            candidate = &beta + &step * scale;
            candidate_ll = log_likelihood(design, labels, &candidate);
        }
        beta = candidate;
        loglik = candidate_ll;

        if beta.norm() > COEF_LIMIT || !beta.iter().all(|b| b.is_finite()) {
            return Err(FitError::Separation);
        }
        if step.amax() * scale < 1e-10 {
            let p = (design * &beta).map(sigmoid);
            return Ok(LogisticModel {
                coefficients: beta.iter().copied().collect(),
                converged: true,
                iterations: iteration + 1,
                gradient_norm: (design.transpose() * (&y - &p)).amax(),
            });
        }
    }
    Err(FitError::NoConverge {
        iterations: options.max_iter,
    })
}

/// Intercept plus covariate main effects for the given subjects; no
/// interactions. Covariates 11-13 are dropped unless `full_ps_model`.
pub fn ps_design(data: &TrialData, positions: &[usize], options: &PsOptions) -> DMatrix<f64> {
    let width = if options.full_ps_model { N_COVARIATES } else { MEASURED_COVARIATES };
    DMatrix::from_fn(positions.len(), width + 1, |r, c| {
        if c == 0 {
            1.0
        } else {
            data.subjects[positions[r]].x[c - 1]
        }
    })
}

/// Fitted propensity scores for one weighting scheme.
#[derive(Clone, Debug, PartialEq)]
pub struct PropensityScores {
    pub joint: bool,
    /// One entry per subject; `Some` for historical controls.
    pub historical: Vec<Option<f64>>,
    /// MT scores from each model, in MT position order (two models when
    /// separate, one when joint).
    pub treated: Vec<Vec<f64>>,
}

fn clamp_ps(p: f64) -> f64 {
    p.clamp(PS_CLAMP, 1.0 - PS_CLAMP)
}

/// Fit MT versus the pooled `controls` and return clamped scores for the
/// treated and control positions.
fn fit_membership(
    data: &TrialData,
    controls: &[Source],
    options: &PsOptions,
) -> Result<(Vec<usize>, Vec<f64>, Vec<usize>, Vec<f64>)> {
    let treated = data.positions(&[Source::Mt]);
    let control = data.positions(controls);
    if treated.is_empty() {
        return Err(crate::error::Error::EmptyArm(Source::Mt));
    }
    for &s in controls {
        if data.count(s) == 0 {
            return Err(crate::error::Error::EmptyArm(s));
        }
    }
    let rows: Vec<usize> = treated.iter().chain(&control).copied().collect();
    let labels: Vec<f64> = rows.iter().map(|&i| f64::from(data.subjects[i].treatment)).collect();
    let design = ps_design(data, &rows, options);
    let model = fit_logistic(&design, &labels, options.logistic)?;
    let scores: Vec<f64> = model.predict(&design).into_iter().map(clamp_ps).collect();
    let (t_scores, c_scores) = scores.split_at(treated.len());
    Ok((treated, t_scores.to_vec(), control, c_scores.to_vec()))
}

/// Two models: MT vs HC0 and MT vs HC1.
pub fn separate_scores(data: &TrialData, options: &PsOptions) -> Result<PropensityScores> {
    let mut historical = vec![None; data.subjects.len()];
    let mut treated = Vec::new();
    for hc in [Source::Hc0, Source::Hc1] {
        let (_, t_scores, control, c_scores) = fit_membership(data, &[hc], options)?;
        for (i, p) in control.into_iter().zip(c_scores) {
            historical[i] = Some(p);
        }
        treated.push(t_scores);
    }
    Ok(PropensityScores {
        joint: false,
        historical,
        treated,
    })
}

/// One model: MT vs HC0 and HC1 pooled.
pub fn joint_scores(data: &TrialData, options: &PsOptions) -> Result<PropensityScores> {
    let mut historical = vec![None; data.subjects.len()];
    let (_, t_scores, control, c_scores) = fit_membership(data, &[Source::Hc0, Source::Hc1], options)?;
    for (i, p) in control.into_iter().zip(c_scores) {
        historical[i] = Some(p);
    }
    Ok(PropensityScores {
        joint: true,
        historical,
        treated: vec![t_scores],
    })
}

/// Odds weight of a historical control.
pub fn iptw_weight(ps: f64) -> f64 {
    ps / (1.0 - ps)
}

pub fn iptw_from_scores(data: &TrialData, scores: &PropensityScores) -> Result<WeightSet> {
    let weights = data
        .subjects
        .iter()
        .zip(&scores.historical)
        .map(|(s, ps)| match (s.source.is_historical(), ps) {
            (true, Some(p)) => iptw_weight(*p),
            _ => 1.0,
        })
        .collect();
    let method = if scores.joint { WeightMethod::Jiptw } else { WeightMethod::Siptw };
    WeightSet::new(method, data, weights, scores.historical.clone())
}

pub fn separate_iptw(data: &TrialData, options: &PsOptions) -> Result<WeightSet> {
    iptw_from_scores(data, &separate_scores(data, options)?)
}

pub fn joint_iptw(data: &TrialData, options: &PsOptions) -> Result<WeightSet> {
    iptw_from_scores(data, &joint_scores(data, options)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_dataset, ScenarioSpec};
    use approx::assert_abs_diff_eq;

    fn design_1d(x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(x.len(), 2, |r, c| if c == 0 { 1.0 } else { x[r] })
    }

    #[test]
    fn symmetric_design_has_zero_slope() {
        let x = [-1.0, -1.0, 1.0, 1.0];
        let y = [0.0, 1.0, 1.0, 0.0];
        let m = fit_logistic(&design_1d(&x), &y, LogisticOptions::default()).unwrap();
        assert!(m.converged);
        assert_abs_diff_eq!(m.coefficients[1], 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(m.coefficients[0], 0.0, epsilon = 1e-10);
    }

    #[test]
    fn degenerate_labels() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let err = fit_logistic(&design_1d(&x), &[1.0; 4], LogisticOptions::default()).unwrap_err();
        assert_eq!(err, FitError::Separation);
        let err = fit_logistic(&design_1d(&x), &[0.0, 0.0, 1.0, 1.0], LogisticOptions::default()).unwrap_err();
        assert_eq!(err, FitError::Separation);
    }

    #[test]
    fn collinear_design_is_singular() {
        let d = DMatrix::from_fn(6, 3, |r, c| if c == 0 { 1.0 } else { r as f64 });
        let err = fit_logistic(&d, &[0.0, 1.0, 0.0, 1.0, 1.0, 0.0], LogisticOptions::default()).unwrap_err();
        assert_eq!(err, FitError::Singular);
    }

    #[test]
    fn shift_changes_intercept_only() {
        let x = [0.3, -1.2, 2.2, 0.1, 1.5, -0.4, 0.9, 1.1];
        let y = [0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0];
        let shifted: Vec<f64> = x.iter().map(|v| v + 5.0).collect();
        let a = fit_logistic(&design_1d(&x), &y, LogisticOptions::default()).unwrap();
        let b = fit_logistic(&design_1d(&shifted), &y, LogisticOptions::default()).unwrap();
        for (p, q) in a.predict(&design_1d(&x)).iter().zip(b.predict(&design_1d(&shifted))) {
            assert_abs_diff_eq!(*p, q, epsilon = 1e-8);
        }
        assert_abs_diff_eq!(a.coefficients[1], b.coefficients[1], epsilon = 1e-8);
    }

    #[test]
    fn odds_weights() {
        assert_abs_diff_eq!(iptw_weight(0.5), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(iptw_weight(0.8), 4.0, epsilon = 1e-12);
        assert!(iptw_weight(1e-9) < 1e-8);
        let grid: Vec<f64> = (1..100).map(|i| iptw_weight(f64::from(i) / 100.0)).collect();
        assert!(grid.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn design_width_and_order() {
        let data = gen_dataset(&ScenarioSpec::new("1", [0.0; 3]), 1).unwrap();
        let rows = [0usize, 5, 20];
        let d = ps_design(&data, &rows, &PsOptions::default());
        assert_eq!(d.ncols(), 11);
        for (r, &i) in rows.iter().enumerate() {
            assert_eq!(d[(r, 0)], 1.0);
            for k in 0..10 {
                assert_eq!(d[(r, k + 1)], data.subjects[i].x[k]);
            }
        }
        let full = PsOptions {
            full_ps_model: true,
            ..Default::default()
        };
        assert_eq!(ps_design(&data, &rows, &full).ncols(), 14);
    }

    #[test]
    fn iptw_weight_sets() {
        let data = gen_dataset(&ScenarioSpec::new("3", [0.5f64.ln(), 3f64.ln(), 3f64.ln()]), 4).unwrap();
        for ws in [separate_iptw(&data, &PsOptions::default()).unwrap(), joint_iptw(&data, &PsOptions::default()).unwrap()] {
            for (s, w) in data.subjects.iter().zip(&ws.weights) {
                if s.source.is_historical() {
                    assert!(*w >= 0.0 && w.is_finite());
                } else {
                    assert_eq!(*w, 1.0);
                }
            }
            assert!(ws.htd_ess >= 1.0 && ws.htd_ess <= 400.0);
        }
    }

    #[test]
    fn identical_laws_give_ratio_weights() {
        let mut s = ScenarioSpec::new("1", [0.0; 3]);
        s.covariates = crate::datagen::CovariateSpec::balanced();
        s.arms.mt = 400;
        s.arms.hc0 = 800;
        let data = gen_dataset(&s, 21).unwrap();
        let ws = separate_iptw(&data, &PsOptions::default()).unwrap();
        let hc0: Vec<f64> = data
            .subjects
            .iter()
            .zip(&ws.weights)
            .filter(|(s, _)| s.source == Source::Hc0)
            .map(|(_, &w)| w)
            .collect();
        let mean = hc0.iter().sum::<f64>() / hc0.len() as f64;
        assert!((mean / 0.5 - 1.0).abs() < 0.1, "mean weight {mean}");
    }
}
