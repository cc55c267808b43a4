use nalgebra::{DMatrix, DVector};

use super::{validate_samples, Design, FitResult, SurvivalModel, SurvivalSample};
use crate::error::FitError;
use crate::optim::{self, Evaluation, NewtonOptions};

/// Subjects in decreasing time order, grouped by tied times.
struct RiskSetData {
    rows: Vec<[f64; 3]>,
    weights: Vec<f64>,
    events: Vec<bool>,
    /// `[start, end)` ranges of tied times, latest first.
    groups: Vec<(usize, usize)>,
    width: usize,
}

impl RiskSetData {
    fn new(samples: &[SurvivalSample], design: Design) -> Self {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.sort_by(|&a, &b| samples[b].time.total_cmp(&samples[a].time).then(a.cmp(&b)));
        let mut groups = Vec::new();
        let mut start = 0;
        for i in 1..=order.len() {
            if i == order.len() || samples[order[i]].time != samples[order[start]].time {
                groups.push((start, i));
                start = i;
            }
        }
        RiskSetData {
            rows: order.iter().map(|&i| design.row(&samples[i])).collect(),
            weights: order.iter().map(|&i| samples[i].weight).collect(),
            events: order.iter().map(|&i| samples[i].event).collect(),
            groups,
            width: design.width(),
        }
    }

    /// Breslow log partial likelihood with gradient and Hessian.
    fn evaluate(&self, beta: &[f64]) -> Option<Evaluation> {
        let p = self.width;
        let lp: Vec<f64> = self
            .rows
            .iter()
            .map(|r| (0..p).map(|k| r[k] * beta[k]).sum::<f64>())
            .collect();
        let offset = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !offset.is_finite() {
            return None;
        }
        let mut s0 = 0.0;
        let mut s1 = [0.0; 3];
        let mut s2 = [[0.0; 3]; 3];
        let mut value = 0.0;
        let mut gradient = DVector::zeros(p);
        let mut hessian = DMatrix::zeros(p, p);
        for &(start, end) in &self.groups {
            for i in start..end {
                let r = self.weights[i] * (lp[i] - offset).exp();
                s0 += r;
                for a in 0..p {
                    s1[a] += r * self.rows[i][a];
                    for b in 0..p {
                        s2[a][b] += r * self.rows[i][a] * self.rows[i][b];
                    }
                }
            }
            for i in start..end {
                let w = self.weights[i];
                if !self.events[i] || w == 0.0 {
                    continue;
                }
                value += w * (lp[i] - offset - s0.ln());
                for a in 0..p {
                    let mean_a = s1[a] / s0;
                    gradient[a] += w * (self.rows[i][a] - mean_a);
                    for b in 0..p {
                        hessian[(a, b)] -= w * (s2[a][b] / s0 - mean_a * s1[b] / s0);
                    }
                }
            }
        }
        value.is_finite().then_some(Evaluation {
            value,
            gradient,
            hessian,
        })
    }
}

/// Weighted Breslow log partial likelihood at `beta`.
pub fn cox_log_partial_likelihood(samples: &[SurvivalSample], design: Design, beta: &[f64]) -> f64 {
    RiskSetData::new(samples, design)
        .evaluate(beta)
        .map_or(f64::NEG_INFINITY, |e| e.value)
}

/// Newton maximization of the weighted partial likelihood; the treatment
/// coefficient is the log hazard ratio.
pub fn fit_cox_weighted(samples: &[SurvivalSample], design: Design) -> Result<FitResult, FitError> {
    validate_samples(samples)?;
    let data = RiskSetData::new(samples, design);
    let options = NewtonOptions {
        max_iter: 1500,
        ..Default::default()
    };
    let result = optim::maximize(
        DVector::zeros(design.width()),
        |beta| data.evaluate(beta.as_slice()),
        options,
    )?;
    let coefficients: Vec<f64> = result.estimate.iter().copied().collect();
    Ok(FitResult {
        model: SurvivalModel::Cox,
        log_hr: coefficients[0],
        coefficients,
        scale: None,
        shape: None,
        iterations: result.iterations,
    })
}
