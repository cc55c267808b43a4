//! Weighted survival regression: Cox proportional hazards and Weibull AFT.

mod aft;
mod cox;

pub use aft::{aft_log_likelihood, fit_weibull_aft_weighted};
pub use cox::{cox_log_partial_likelihood, fit_cox_weighted};

use serde::{Deserialize, Serialize};

use crate::datagen::{Source, TrialData};
use crate::error::{FitError, Result};
use crate::weights::WeightSet;

/// Trial-source factor of the joint outcome regressions. MT and MC share
/// the current-trial level, which is the reference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrialFactor {
    Current,
    Hc0,
    Hc1,
}

impl From<Source> for TrialFactor {
    fn from(source: Source) -> Self {
        match source {
            Source::Mt | Source::Mc => TrialFactor::Current,
            Source::Hc0 => TrialFactor::Hc0,
            Source::Hc1 => TrialFactor::Hc1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalSample {
    pub time: f64,
    pub event: bool,
    pub treatment: u8,
    pub trial: TrialFactor,
    pub weight: f64,
}

/// Covariates of the outcome regression besides any intercept.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Design {
    /// Treatment indicator only.
    Treatment,
    /// Treatment plus HC0 and HC1 dummies of the trial factor.
    TreatmentAndTrial,
}

impl Design {
    pub fn width(self) -> usize {
        match self {
            Design::Treatment => 1,
            Design::TreatmentAndTrial => 3,
        }
    }

    pub(crate) fn row(self, s: &SurvivalSample) -> [f64; 3] {
        let a = f64::from(s.treatment);
        match self {
            Design::Treatment => [a, 0.0, 0.0],
            Design::TreatmentAndTrial => [
                a,
                f64::from(u8::from(s.trial == TrialFactor::Hc0)),
                f64::from(u8::from(s.trial == TrialFactor::Hc1)),
            ],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SurvivalModel {
    Cox,
    #[serde(rename = "AFT")]
    Aft,
}

impl SurvivalModel {
    pub fn label(self) -> &'static str {
        match self {
            SurvivalModel::Cox => "Cox",
            SurvivalModel::Aft => "AFT",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: SurvivalModel,
    /// Log hazard ratio of treatment.
    pub log_hr: f64,
    /// Raw coefficients: Cox `[A, Q...]`; AFT `[intercept, A, Q...]`.
    pub coefficients: Vec<f64>,
    /// AFT scale of the log-time error.
    pub scale: Option<f64>,
    /// AFT implied Weibull shape `1 / scale`.
    pub shape: Option<f64>,
    pub iterations: usize,
}

/// Weibull AFT treatment coefficient on the log hazard ratio scale.
pub fn aft_to_loghr(coef: f64, sigma: f64) -> Result<f64, FitError> {
    if !(sigma > 0.0) {
        return Err(FitError::Invalid(format!("scale {sigma} must be positive")));
    }
    Ok(-coef / sigma)
}

pub(crate) fn validate_samples(samples: &[SurvivalSample]) -> Result<(), FitError> {
    if samples.iter().any(|s| !(s.time > 0.0 && s.time.is_finite())) {
        return Err(FitError::Invalid("survival times must be positive and finite".into()));
    }
    if samples.iter().any(|s| !(s.weight >= 0.0 && s.weight.is_finite())) {
        return Err(FitError::Invalid("weights must be finite and nonnegative".into()));
    }
    let events = samples.iter().filter(|s| s.event && s.weight > 0.0).count();
    if events < 2 {
        return Err(FitError::Invalid(format!("need at least two weighted events, found {events}")));
    }
    Ok(())
}

/// All four arms with their analysis weights.
pub fn weighted_samples(data: &TrialData, weights: &WeightSet) -> Vec<SurvivalSample> {
    data.subjects
        .iter()
        .zip(&weights.weights)
        .map(|(s, &w)| SurvivalSample {
            time: s.time,
            event: s.event,
            treatment: s.treatment,
            trial: s.source.into(),
            weight: w,
        })
        .collect()
}

/// Marginal log HR estimate of a propensity-weighted outcome regression.
pub fn estimate_frequentist(data: &TrialData, weights: &WeightSet, model: SurvivalModel) -> Result<FitResult> {
    let samples = weighted_samples(data, weights);
    let design = if weights.requires_trial_factor() {
        Design::TreatmentAndTrial
    } else {
        Design::Treatment
    };
    let fit = match model {
        SurvivalModel::Cox => fit_cox_weighted(&samples, design)?,
        SurvivalModel::Aft => fit_weibull_aft_weighted(&samples, design)?,
    };
    Ok(fit)
}
