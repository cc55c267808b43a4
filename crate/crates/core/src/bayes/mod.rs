//! Bayesian dynamic borrowing for a Weibull proportional-hazards outcome.
//!
//! The current control log-hazard `alpha0` is tied to the historical ones by
//! a commensurate normal prior whose precision controls how much historical
//! information flows into the estimate of `delta`. Covariates are not used.

mod mcmc;

use serde::{Deserialize, Serialize};

use crate::datagen::{Source, TrialData};
use crate::error::{Error, Result};

pub use mcmc::{mcmc_run, mcmc_sample, posterior_summary, split_rhat, draw_tau, tau_conditional, McmcOptions, Posterior, RHAT_LIMIT};

/// Prior variance for the location parameters.
pub const VAGUE_VARIANCE: f64 = 1000.0;
pub const SHAPE_PRIOR: (f64, f64) = (0.01, 0.01);
pub const INFORMATIVE_TAU: (f64, f64) = (1.0, 0.001);
pub const NONINFORMATIVE_TAU: (f64, f64) = (0.001, 0.001);
pub const HALF_CAUCHY_SCALE: f64 = 2.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BorrowVariant {
    #[serde(rename = "NB")]
    Nb,
    #[serde(rename = "FB")]
    Fb,
    #[serde(rename = "NPS")]
    Nps,
    #[serde(rename = "NPD")]
    Npd,
    #[serde(rename = "IPS")]
    Ips,
    #[serde(rename = "IPD")]
    Ipd,
    #[serde(rename = "WPS")]
    Wps,
    #[serde(rename = "WPD")]
    Wpd,
}

/// Prior family on the commensurate precision.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TauPrior {
    Gamma { shape: f64, rate: f64 },
    /// Half-Cauchy on the square root of the precision.
    HalfCauchy { scale: f64 },
}

impl BorrowVariant {
    pub const ALL: [BorrowVariant; 8] = [
        BorrowVariant::Nb,
        BorrowVariant::Fb,
        BorrowVariant::Nps,
        BorrowVariant::Npd,
        BorrowVariant::Ips,
        BorrowVariant::Ipd,
        BorrowVariant::Wps,
        BorrowVariant::Wpd,
    ];

    pub fn label(self) -> &'static str {
        match self {
            BorrowVariant::Nb => "NB",
            BorrowVariant::Fb => "FB",
            BorrowVariant::Nps => "NPS",
            BorrowVariant::Npd => "NPD",
            BorrowVariant::Ips => "IPS",
            BorrowVariant::Ipd => "IPD",
            BorrowVariant::Wps => "WPS",
            BorrowVariant::Wpd => "WPD",
        }
    }

    pub fn is_commensurate(self) -> bool {
        !matches!(self, BorrowVariant::Nb | BorrowVariant::Fb)
    }

    /// Two commensurate parameters, one per historical source.
    pub fn is_distinct(self) -> bool {
        matches!(self, BorrowVariant::Npd | BorrowVariant::Ipd | BorrowVariant::Wpd)
    }

    pub fn tau_prior(self) -> Option<TauPrior> {
        let gamma = |(shape, rate): (f64, f64)| TauPrior::Gamma { shape, rate };
        match self {
            BorrowVariant::Nb | BorrowVariant::Fb => None,
            BorrowVariant::Nps | BorrowVariant::Npd => Some(gamma(NONINFORMATIVE_TAU)),
            BorrowVariant::Ips | BorrowVariant::Ipd => Some(gamma(INFORMATIVE_TAU)),
            BorrowVariant::Wps | BorrowVariant::Wpd => Some(TauPrior::HalfCauchy {
                scale: HALF_CAUCHY_SCALE,
            }),
        }
    }
}

impl std::fmt::Display for BorrowVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for BorrowVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        BorrowVariant::ALL
            .into_iter()
            .find(|v| v.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Argument(format!("unknown borrowing variant {s:?}")))
    }
}

/// How the single-precision variants link `alpha0` to the historical arms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SameForm {
    /// One pooled historical parameter `alpha3`.
    #[default]
    Pooled,
    /// Separate `alpha1`, `alpha2` with `alpha0` centred on their
    /// size-weighted mean.
    WeightedMean,
}

/// Commensurate structure resolved from variant and form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Link {
    None,
    Full,
    Pooled,
    WeightedMean([f64; 2]),
    Product,
}

impl Link {
    /// Historical location parameters carried in the state.
    pub(crate) fn n_hist(self) -> usize {
        match self {
            Link::None | Link::Full => 0,
            Link::Pooled => 1,
            Link::WeightedMean(_) | Link::Product => 2,
        }
    }

    pub(crate) fn n_tau(self) -> usize {
        match self {
            Link::None | Link::Full => 0,
            Link::Product => 2,
            _ => 1,
        }
    }
}

/// Model parameters; fields a variant does not use are ignored.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BayesParams {
    pub alpha0: f64,
    pub delta: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    /// `tau[1]` is used only by the two-precision variants.
    pub tau: [f64; 2],
    pub shape: f64,
}

impl Default for BayesParams {
    fn default() -> Self {
        BayesParams {
            alpha0: 0.0,
            delta: 0.0,
            alpha1: 0.0,
            alpha2: 0.0,
            alpha3: 0.0,
            tau: [1.0, 1.0],
            shape: 1.0,
        }
    }
}

/// Survival outcomes grouped by arm.
#[derive(Clone, Debug, PartialEq)]
pub struct BayesData {
    groups: [Group; 4],
}

#[derive(Clone, Debug, Default, PartialEq)]
pub(crate) struct Group {
    pub log_time: Vec<f64>,
    pub events: f64,
    pub sum_log_event_time: f64,
}

impl Group {
    fn new(times: &[f64], events: &[bool]) -> Result<Self> {
        if times.len() != events.len() {
            return Err(Error::Argument("times and events differ in length".into()));
        }
        if times.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(Error::Argument("survival times must be positive".into()));
        }
        let log_time: Vec<f64> = times.iter().map(|t| t.ln()).collect();
        let events_n = events.iter().filter(|&&e| e).count() as f64;
        let sum_log_event_time = log_time.iter().zip(events).filter(|(_, &e)| e).map(|(l, _)| l).sum();
        Ok(Group {
            log_time,
            events: events_n,
            sum_log_event_time,
        })
    }

    /// `sum t^p`.
    pub(crate) fn exposure(&self, shape: f64) -> f64 {
        self.log_time.iter().map(|l| (shape * l).exp()).sum()
    }

    pub(crate) fn len(&self) -> usize {
        self.log_time.len()
    }
}

/// Arm slots in `BayesData`.
pub(crate) const MT: usize = 0;
pub(crate) const MC: usize = 1;
pub(crate) const HC0: usize = 2;
pub(crate) const HC1: usize = 3;

impl BayesData {
    /// `arms[i] = (times, events)` in the order MT, MC, HC0, HC1.
    pub fn new(arms: [(&[f64], &[bool]); 4]) -> Result<Self> {
        Ok(BayesData {
            groups: [
                Group::new(arms[0].0, arms[0].1)?,
                Group::new(arms[1].0, arms[1].1)?,
                Group::new(arms[2].0, arms[2].1)?,
                Group::new(arms[3].0, arms[3].1)?,
            ],
        })
    }

    pub fn from_trial(data: &TrialData) -> Result<Self> {
        let mut times: [Vec<f64>; 4] = Default::default();
        let mut events: [Vec<bool>; 4] = Default::default();
        for s in &data.subjects {
            let slot = match s.source {
                Source::Mt => MT,
                Source::Mc => MC,
                Source::Hc0 => HC0,
                Source::Hc1 => HC1,
            };
            times[slot].push(s.time);
            events[slot].push(s.event);
        }
        Self::new([
            (&times[0], &events[0]),
            (&times[1], &events[1]),
            (&times[2], &events[2]),
            (&times[3], &events[3]),
        ])
    }

    pub(crate) fn group(&self, slot: usize) -> &Group {
        &self.groups[slot]
    }

    /// Weights of HC0 and HC1 by sample size.
    pub fn historical_weights(&self) -> [f64; 2] {
        let (a, b) = (self.groups[HC0].len() as f64, self.groups[HC1].len() as f64);
        if a + b == 0.0 {
            [0.5, 0.5]
        } else {
            [a / (a + b), b / (a + b)]
        }
    }
}

/// Variant plus the modelling switches that shape its posterior.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BorrowModel {
    pub variant: BorrowVariant,
    pub same_form: SameForm,
    /// HC0/HC1 weights for the weighted-mean form.
    pub hc_weights: [f64; 2],
}

impl BorrowModel {
    pub fn new(variant: BorrowVariant, same_form: SameForm, data: &BayesData) -> Self {
        BorrowModel {
            variant,
            same_form,
            hc_weights: data.historical_weights(),
        }
    }

    pub(crate) fn link(&self) -> Link {
        match self.variant {
            BorrowVariant::Nb => Link::None,
            BorrowVariant::Fb => Link::Full,
            v if v.is_distinct() => Link::Product,
            _ => match self.same_form {
                SameForm::Pooled => Link::Pooled,
                SameForm::WeightedMean => Link::WeightedMean(self.hc_weights),
            },
        }
    }

    /// Linear predictor of HC0 and HC1, `None` when they are left out.
    pub(crate) fn historical_predictors(&self, params: &BayesParams) -> Option<[f64; 2]> {
        match self.link() {
            Link::None => None,
            Link::Full => Some([params.alpha0; 2]),
            Link::Pooled => Some([params.alpha3; 2]),
            Link::WeightedMean(_) | Link::Product => Some([params.alpha1, params.alpha2]),
        }
    }

    pub fn log_likelihood(&self, data: &BayesData, params: &BayesParams) -> Result<f64> {
        validate_shape(params.shape)?;
        let p = params.shape;
        let mut total = group_loglik(data.group(MT), params.alpha0 + params.delta, p, data.group(MT).exposure(p));
        total += group_loglik(data.group(MC), params.alpha0, p, data.group(MC).exposure(p));
        if let Some(f) = self.historical_predictors(params) {
            for (slot, fk) in [HC0, HC1].into_iter().zip(f) {
                total += group_loglik(data.group(slot), fk, p, data.group(slot).exposure(p));
            }
        }
        Ok(total)
    }

    /// Log prior density. For half-Cauchy variants the precision enters
    /// through the density of its square root.
    pub fn log_prior(&self, params: &BayesParams) -> Result<f64> {
        validate_shape(params.shape)?;
        let link = self.link();
        let taus = &params.tau[..link.n_tau()];
        if taus.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(Error::Argument("commensurate precision must be positive".into()));
        }
        let (a, b) = SHAPE_PRIOR;
        let mut total = normal_log_density(params.delta, 0.0, VAGUE_VARIANCE) + gamma_log_density(params.shape, a, b);
        total += match link {
            Link::None | Link::Full => normal_log_density(params.alpha0, 0.0, VAGUE_VARIANCE),
            Link::Pooled => {
                normal_log_density(params.alpha3, 0.0, VAGUE_VARIANCE)
                    + normal_log_density(params.alpha0, params.alpha3, 1.0 / params.tau[0])
            }
            Link::WeightedMean(w) => {
                normal_log_density(params.alpha1, 0.0, VAGUE_VARIANCE)
                    + normal_log_density(params.alpha2, 0.0, VAGUE_VARIANCE)
                    + normal_log_density(params.alpha0, w[0] * params.alpha1 + w[1] * params.alpha2, 1.0 / params.tau[0])
            }
            Link::Product => {
                normal_log_density(params.alpha1, 0.0, VAGUE_VARIANCE)
                    + normal_log_density(params.alpha2, 0.0, VAGUE_VARIANCE)
                    + normal_log_density(params.alpha0, params.alpha1, 1.0 / params.tau[0])
                    + normal_log_density(params.alpha0, params.alpha2, 1.0 / params.tau[1])
            }
        };
        if let Some(prior) = self.variant.tau_prior() {
            total += taus.iter().map(|&t| tau_log_prior(prior, t)).sum::<f64>();
        }
        Ok(total)
    }
}

/// Free-function forms of the model densities.
pub fn log_likelihood(data: &BayesData, params: &BayesParams, model: &BorrowModel) -> Result<f64> {
    model.log_likelihood(data, params)
}

pub fn log_prior(params: &BayesParams, model: &BorrowModel) -> Result<f64> {
    model.log_prior(params)
}

/// Weibull PH log-likelihood of one group with common predictor `f`, given
/// its exposure `sum t^p`.
pub(crate) fn group_loglik(g: &Group, f: f64, shape: f64, exposure: f64) -> f64 {
    if g.len() == 0 {
        return 0.0;
    }
    g.events * (shape.ln() + f) + (shape - 1.0) * g.sum_log_event_time - f.exp() * exposure
}

/// Single-subject Weibull PH contribution.
pub fn subject_loglik(time: f64, event: bool, f: f64, shape: f64) -> Result<f64> {
    if !(time > 0.0) {
        return Err(Error::Argument("survival times must be positive".into()));
    }
    validate_shape(shape)?;
    let cumulative = f.exp() * time.powf(shape);
    Ok(if event {
        shape.ln() + (shape - 1.0) * time.ln() + f - cumulative
    } else {
        -cumulative
    })
}

fn validate_shape(shape: f64) -> Result<()> {
    if shape > 0.0 && shape.is_finite() {
        Ok(())
    } else {
        Err(Error::Argument("Weibull shape must be positive".into()))
    }
}

pub(crate) fn tau_log_prior(prior: TauPrior, tau: f64) -> f64 {
    match prior {
        TauPrior::Gamma { shape, rate } => gamma_log_density(tau, shape, rate),
        TauPrior::HalfCauchy { scale } => half_cauchy_log_density(tau.sqrt(), scale),
    }
}

pub fn normal_log_density(x: f64, mean: f64, variance: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * variance).ln() - (x - mean).powi(2) / (2.0 * variance)
}

/// Gamma(shape, rate) log density; `x = 0` is allowed when `shape = 1`.
pub fn gamma_log_density(x: f64, shape: f64, rate: f64) -> f64 {
    if x < 0.0 {
        return f64::NEG_INFINITY;
    }
    let power = if shape == 1.0 { 0.0 } else { (shape - 1.0) * x.ln() };
    shape * rate.ln() - libm::lgamma(shape) + power - rate * x
}

/// Cauchy(0, scale) truncated to the positive half-line.
pub fn half_cauchy_log_density(x: f64, scale: f64) -> f64 {
    if x < 0.0 {
        return f64::NEG_INFINITY;
    }
    (2.0 / (std::f64::consts::PI * scale)).ln() - (1.0 + (x / scale).powi(2)).ln()
}
