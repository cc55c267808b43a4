//! Synthetic three-source trial data.
//!
//! A dataset holds four arms: the current-trial treated arm (MT), the
//! current-trial control arm (MC) and two historical control arms (HC0, HC1).
//! Event times are Weibull with proportional hazards on the linear predictor
//!
//! ```text
//! eta = beta0 + beta_D + gamma . x + xi * x8 * A
//! ```
//!
//! and censoring times are normal per arm, centred on a multiple of the arm's
//! mean event time.

use std::fmt;
use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Normal, Open01};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, SimRng};

pub const N_COVARIATES: usize = 13;
/// Zero-based column of the treatment effect modifier X8.
pub const EFFECT_MODIFIER: usize = 7;

pub type CovariateRow = [f64; N_COVARIATES];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "MT")]
    Mt,
    #[serde(rename = "MC")]
    Mc,
    #[serde(rename = "HC0")]
    Hc0,
    #[serde(rename = "HC1")]
    Hc1,
}

impl Source {
    pub const ALL: [Source; 4] = [Source::Mt, Source::Mc, Source::Hc0, Source::Hc1];

    pub fn label(self) -> &'static str {
        match self {
            Source::Mt => "MT",
            Source::Mc => "MC",
            Source::Hc0 => "HC0",
            Source::Hc1 => "HC1",
        }
    }

    pub fn is_historical(self) -> bool {
        matches!(self, Source::Hc0 | Source::Hc1)
    }

    fn index(self) -> u64 {
        match self {
            Source::Mt => 0,
            Source::Mc => 1,
            Source::Hc0 => 2,
            Source::Hc1 => 3,
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "MT" => Ok(Source::Mt),
            "MC" => Ok(Source::Mc),
            "HC0" => Ok(Source::Hc0),
            "HC1" => Ok(Source::Hc1),
            other => Err(Error::Argument(format!("unknown source label {other:?}"))),
        }
    }
}

/// A per-arm parameter. MT and MC share the `current` value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmValues {
    pub current: f64,
    pub hc0: f64,
    pub hc1: f64,
}

impl ArmValues {
    pub fn uniform(value: f64) -> Self {
        ArmValues {
            current: value,
            hc0: value,
            hc1: value,
        }
    }

    pub fn get(&self, source: Source) -> f64 {
        match source {
            Source::Mt | Source::Mc => self.current,
            Source::Hc0 => self.hc0,
            Source::Hc1 => self.hc1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Covariate {
    Continuous { mean: ArmValues, sd: ArmValues },
    Binary { prevalence: ArmValues },
}

impl Covariate {
    fn validate(&self, index: usize) -> Result<()> {
        let bad = |what: &str| Err(Error::Spec(format!("covariate x{}: {what}", index + 1)));
        match self {
            Covariate::Continuous { mean, sd } => {
                for s in Source::ALL {
                    if !mean.get(s).is_finite() {
                        return bad("mean must be finite");
                    }
                    let v = sd.get(s);
                    if !(v.is_finite() && v >= 0.0) {
                        return bad("sd must be finite and nonnegative");
                    }
                }
            }
            Covariate::Binary { prevalence } => {
                for s in Source::ALL {
                    let v = prevalence.get(s);
                    if !(0.0..=1.0).contains(&v) {
                        return bad("prevalence must lie in [0, 1]");
                    }
                }
            }
        }
        Ok(())
    }

    /// Mean of the covariate in the given arm.
    pub fn mean(&self, source: Source) -> f64 {
        match self {
            Covariate::Continuous { mean, .. } => mean.get(source),
            Covariate::Binary { prevalence } => prevalence.get(source),
        }
    }

    /// Standard deviation of the covariate in the given arm.
    pub fn sd(&self, source: Source) -> f64 {
        match self {
            Covariate::Continuous { sd, .. } => sd.get(source),
            Covariate::Binary { prevalence } => {
                let p = prevalence.get(source);
                (p * (1.0 - p)).sqrt()
            }
        }
    }
}

/// Thirteen independent baseline covariates; the eighth is the effect modifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CovariateSpec {
    pub covariates: Vec<Covariate>,
}

/// Imbalance between current and historical arms in the default covariate law.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Imbalance {
    /// Mean shift of historical continuous covariates, in current-arm sd units.
    pub continuous_sd: f64,
    /// Additive shift of historical binary prevalences.
    pub binary_prevalence: f64,
}

impl Default for Imbalance {
    fn default() -> Self {
        Imbalance {
            continuous_sd: -0.05,
            binary_prevalence: -0.10,
        }
    }
}

/// Current-arm means and sds of the continuous covariates of the default law:
/// centred, on a raw clinical scale (age-like spread).
const DEFAULT_CONTINUOUS: [(usize, f64, f64); 8] = [
    (0, 0.0, 10.0),
    (1, 0.0, 10.0),
    (2, 0.0, 10.0),
    (3, 0.0, 10.0),
    (4, 0.0, 10.0),
    (5, 0.0, 10.0),
    (6, 0.0, 10.0),
    (8, 0.0, 10.0),
];

/// Current-arm prevalences of the binary covariates of the default law.
const DEFAULT_BINARY: [(usize, f64); 5] = [(7, 0.4), (9, 0.5), (10, 0.3), (11, 0.4), (12, 0.5)];

impl CovariateSpec {
    /// Eight continuous and five binary covariates (X8 binary) with MT and MC
    /// identical and both historical arms shifted by `imbalance`.
    pub fn with_imbalance(imbalance: Imbalance) -> Self {
        let mut covariates: Vec<Option<Covariate>> = vec![None; N_COVARIATES];
        for (index, mean, sd) in DEFAULT_CONTINUOUS {
            let shifted = mean + imbalance.continuous_sd * sd;
            covariates[index] = Some(Covariate::Continuous {
                mean: ArmValues {
                    current: mean,
                    hc0: shifted,
                    hc1: shifted,
                },
                sd: ArmValues::uniform(sd),
            });
        }
        for (index, prevalence) in DEFAULT_BINARY {
            let shifted = (prevalence + imbalance.binary_prevalence).clamp(0.0, 1.0);
            covariates[index] = Some(Covariate::Binary {
                prevalence: ArmValues {
                    current: prevalence,
                    hc0: shifted,
                    hc1: shifted,
                },
            });
        }
        CovariateSpec {
            covariates: covariates.into_iter().map(|c| c.expect("all slots filled")).collect(),
        }
    }

    /// Same law in every arm.
    pub fn balanced() -> Self {
        Self::with_imbalance(Imbalance {
            continuous_sd: 0.0,
            binary_prevalence: 0.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.covariates.len() != N_COVARIATES {
            return Err(Error::Spec(format!(
                "expected {N_COVARIATES} covariates, found {}",
                self.covariates.len()
            )));
        }
        for (i, c) in self.covariates.iter().enumerate() {
            c.validate(i)?;
        }
        Ok(())
    }
}

impl Default for CovariateSpec {
    fn default() -> Self {
        Self::with_imbalance(Imbalance::default())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmSizes {
    pub mt: usize,
    pub mc: usize,
    pub hc0: usize,
    pub hc1: usize,
}

impl ArmSizes {
    pub fn get(&self, source: Source) -> usize {
        match source {
            Source::Mt => self.mt,
            Source::Mc => self.mc,
            Source::Hc0 => self.hc0,
            Source::Hc1 => self.hc1,
        }
    }

    pub fn total(&self) -> usize {
        self.mt + self.mc + self.hc0 + self.hc1
    }
}

impl Default for ArmSizes {
    fn default() -> Self {
        ArmSizes {
            mt: 16,
            mc: 15,
            hc0: 100,
            hc1: 300,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Censoring {
    pub mean_multiplier: f64,
    pub variance: f64,
}

impl Default for Censoring {
    fn default() -> Self {
        Censoring {
            mean_multiplier: 1.5,
            variance: 0.1,
        }
    }
}

fn default_gamma() -> Vec<f64> {
    (0..N_COVARIATES).map(|k| 0.01 + 0.005 * k as f64).collect()
}

fn default_xi() -> f64 {
    0.01
}

fn default_shape() -> f64 {
    2.0
}

/// Full data-generating configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub arms: ArmSizes,
    #[serde(default)]
    pub beta0: f64,
    /// Conditional log hazard ratios of MT, HC0 and HC1 against MC.
    pub beta: [f64; 3],
    #[serde(default = "default_gamma")]
    pub gamma: Vec<f64>,
    #[serde(default = "default_xi")]
    pub xi: f64,
    #[serde(default = "default_shape")]
    pub shape_p: f64,
    #[serde(default)]
    pub censoring: Censoring,
    #[serde(default)]
    pub covariates: CovariateSpec,
}

impl ScenarioSpec {
    pub fn new(name: impl Into<String>, beta: [f64; 3]) -> Self {
        ScenarioSpec {
            name: name.into(),
            arms: ArmSizes::default(),
            beta0: 0.0,
            beta,
            gamma: default_gamma(),
            xi: default_xi(),
            shape_p: default_shape(),
            censoring: Censoring::default(),
            covariates: CovariateSpec::default(),
        }
    }

    pub fn with_mt_size(mut self, n_mt: usize) -> Self {
        self.arms.mt = n_mt;
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ScenarioSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for s in Source::ALL {
            if self.arms.get(s) == 0 {
                return Err(Error::Spec(format!("arm {s} must have at least one subject")));
            }
        }
        if !(self.shape_p.is_finite() && self.shape_p > 0.0) {
            return Err(Error::Spec("Weibull shape must be positive".into()));
        }
        if !(self.censoring.variance.is_finite() && self.censoring.variance > 0.0) {
            return Err(Error::Spec("censoring variance must be positive".into()));
        }
        if !(self.censoring.mean_multiplier.is_finite() && self.censoring.mean_multiplier > 0.0) {
            return Err(Error::Spec("censoring mean multiplier must be positive".into()));
        }
        if self.gamma.len() != N_COVARIATES {
            return Err(Error::Spec(format!(
                "gamma must have {N_COVARIATES} entries, found {}",
                self.gamma.len()
            )));
        }
        let finite = self.beta.iter().chain(&self.gamma).chain([&self.beta0, &self.xi]);
        if finite.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::Spec("coefficients must be finite".into()));
        }
        self.covariates.validate()
    }

    /// Coefficient of the arm indicator for `source`; MC is the reference.
    pub fn arm_effect(&self, source: Source) -> f64 {
        match source {
            Source::Mc => 0.0,
            Source::Mt => self.beta[0],
            Source::Hc0 => self.beta[1],
            Source::Hc1 => self.beta[2],
        }
    }
}

/// Latent times, known only for simulated subjects.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentTimes {
    pub event_time: f64,
    pub censor_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub id: u32,
    pub source: Source,
    /// 1 iff the subject is in MT.
    pub treatment: u8,
    pub x: CovariateRow,
    pub time: f64,
    pub event: bool,
    pub latent: Option<LatentTimes>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialData {
    pub subjects: Vec<Subject>,
    pub scenario: String,
    pub seed: u64,
}

impl TrialData {
    pub fn count(&self, source: Source) -> usize {
        self.subjects.iter().filter(|s| s.source == source).count()
    }

    /// Positions (into `subjects`) of the subjects from any of `sources`.
    pub fn positions(&self, sources: &[Source]) -> Vec<usize> {
        self.subjects
            .iter()
            .enumerate()
            .filter(|(_, s)| sources.contains(&s.source))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn arm_sizes(&self) -> ArmSizes {
        ArmSizes {
            mt: self.count(Source::Mt),
            mc: self.count(Source::Mc),
            hc0: self.count(Source::Hc0),
            hc1: self.count(Source::Hc1),
        }
    }

    /// Fraction of subjects whose event was observed.
    pub fn event_fraction(&self) -> f64 {
        let events = self.subjects.iter().filter(|s| s.event).count();
        events as f64 / self.subjects.len().max(1) as f64
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["id".to_string(), "source".into(), "treatment".into()];
        header.extend((1..=N_COVARIATES).map(|k| format!("x{k}")));
        header.extend(["time".to_string(), "event".into()]);
        w.write_record(&header)?;
        for s in &self.subjects {
            let mut row = vec![s.id.to_string(), s.source.label().to_string(), s.treatment.to_string()];
            row.extend(s.x.iter().map(|v| v.to_string()));
            row.push(s.time.to_string());
            row.push(u8::from(s.event).to_string());
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    /// Ingest a dataset in the export layout. Latent times are unknown.
    pub fn read_csv<R: Read>(reader: R, scenario: impl Into<String>) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut subjects = Vec::new();
        let parse = |field: &str, what: &str| -> Result<f64> {
            field
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::Argument(format!("cannot parse {what} value {field:?}")))
        };
        for record in r.records() {
            let record = record?;
            if record.len() != N_COVARIATES + 5 {
                return Err(Error::Argument(format!(
                    "expected {} columns, found {}",
                    N_COVARIATES + 5,
                    record.len()
                )));
            }
            let source: Source = record[1].trim().parse()?;
            let mut x = [0.0; N_COVARIATES];
            for (k, v) in x.iter_mut().enumerate() {
                *v = parse(&record[3 + k], "covariate")?;
            }
            let time = parse(&record[3 + N_COVARIATES], "time")?;
            if !(time > 0.0) {
                return Err(Error::Argument(format!("nonpositive time {time}")));
            }
            subjects.push(Subject {
                id: record[0]
                    .trim()
                    .parse()
                    .map_err(|_| Error::Argument(format!("bad id {:?}", &record[0])))?,
                source,
                treatment: u8::from(source == Source::Mt),
                x,
                time,
                event: parse(&record[4 + N_COVARIATES], "event")? != 0.0,
                latent: None,
            });
        }
        Ok(TrialData {
            subjects,
            scenario: scenario.into(),
            seed: 0,
        })
    }
}

/// Draw `n` covariate rows for `source`. Columns are independent.
pub fn gen_covariates(spec: &CovariateSpec, source: Source, n: usize, rng: &mut SimRng) -> Result<Vec<CovariateRow>> {
    spec.validate()?;
    enum Sampler {
        Normal(Normal<f64>),
        Bernoulli(Bernoulli),
    }
    let samplers = spec
        .covariates
        .iter()
        .map(|c| match c {
            Covariate::Continuous { mean, sd } => Normal::new(mean.get(source), sd.get(source))
                .map(Sampler::Normal)
                .map_err(|e| Error::Spec(e.to_string())),
            Covariate::Binary { prevalence } => Bernoulli::new(prevalence.get(source))
                .map(Sampler::Bernoulli)
                .map_err(|e| Error::Spec(e.to_string())),
        })
        .collect::<Result<Vec<_>>>()?;

    let rows = (0..n)
        .map(|_| {
            let mut row = [0.0; N_COVARIATES];
            for (v, sampler) in row.iter_mut().zip(&samplers) {
                *v = match sampler {
                    Sampler::Normal(d) => d.sample(rng),
                    Sampler::Bernoulli(d) => f64::from(u8::from(d.sample(rng))),
                };
            }
            row
        })
        .collect();
    Ok(rows)
}

pub fn linear_predictor(x: &CovariateRow, source: Source, treatment: u8, scenario: &ScenarioSpec) -> f64 {
    let covariate_part: f64 = scenario.gamma.iter().zip(x).map(|(g, v)| g * v).sum();
    scenario.beta0
        + scenario.arm_effect(source)
        + covariate_part
        + scenario.xi * x[EFFECT_MODIFIER] * f64::from(treatment)
}

/// Invert the Weibull survival function `exp(-exp(eta) t^p)` at `u`.
pub fn gen_event_time(eta: f64, shape: f64, u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Argument(format!("uniform draw {u} outside (0, 1)")));
    }
    if !(shape > 0.0) {
        return Err(Error::Argument(format!("shape {shape} must be positive")));
    }
    Ok((-u.ln() / eta.exp()).powf(shape.recip()))
}

/// Normal censoring times for one arm, mean `multiplier * mean(event_times)`.
/// Nonpositive draws are redrawn.
pub fn gen_censoring(event_times: &[f64], multiplier: f64, variance: f64, rng: &mut SimRng) -> Result<Vec<f64>> {
    if event_times.is_empty() {
        return Err(Error::Argument("censoring requires at least one event time".into()));
    }
    if !(variance > 0.0) {
        return Err(Error::Argument(format!("censoring variance {variance} must be positive")));
    }
    let mean = multiplier * event_times.iter().sum::<f64>() / event_times.len() as f64;
    let normal = Normal::new(mean, variance.sqrt()).map_err(|e| Error::Argument(e.to_string()))?;
    let mut draws = Vec::with_capacity(event_times.len());
    for _ in event_times {
        let mut attempts = 0usize;
        let c = loop {
            let c = normal.sample(rng);
            if c > 0.0 {
                break c;
            }
            attempts += 1;
            if attempts > 100_000 {
                return Err(Error::Argument(format!(
                    "censoring law N({mean}, {variance}) has negligible mass above zero"
                )));
            }
        };
        draws.push(c);
    }
    Ok(draws)
}

/// Generate a full dataset. Each arm has its own random stream so that the
/// current-trial arms do not depend on the historical arm sizes.
pub fn gen_dataset(scenario: &ScenarioSpec, seed: u64) -> Result<TrialData> {
    scenario.validate()?;
    let mut subjects = Vec::with_capacity(scenario.arms.total());
    let mut next_id = 1u32;
    for source in Source::ALL {
        let n = scenario.arms.get(source);
        let mut stream = rng::stream(seed, &[source.index()]);
        let rows = gen_covariates(&scenario.covariates, source, n, &mut stream)?;
        let treatment = u8::from(source == Source::Mt);
        let mut event_times = Vec::with_capacity(n);
        for x in &rows {
            let eta = linear_predictor(x, source, treatment, scenario);
            let u: f64 = stream.sample(Open01);
            event_times.push(gen_event_time(eta, scenario.shape_p, u)?);
        }
        let censor_times = gen_censoring(
            &event_times,
            scenario.censoring.mean_multiplier,
            scenario.censoring.variance,
            &mut stream,
        )?;
        for ((x, t), c) in rows.into_iter().zip(event_times).zip(censor_times) {
            subjects.push(Subject {
                id: next_id,
                source,
                treatment,
                x,
                time: t.min(c),
                event: t <= c,
                latent: Some(LatentTimes {
                    event_time: t,
                    censor_time: c,
                }),
            });
            next_id += 1;
        }
    }
    Ok(TrialData {
        subjects,
        scenario: scenario.name.clone(),
        seed,
    })
}
