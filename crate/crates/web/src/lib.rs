//! Browser bindings: each export takes and returns JSON text so the page
//! needs no generated type glue beyond wasm-bindgen's string passing.

use hybrid_core::bayes::{mcmc_sample, BayesData, BorrowVariant, McmcOptions};
use hybrid_core::datagen::{gen_dataset, Source, TrialData};
use hybrid_core::harness::builtin_scenario;
use hybrid_core::truth::true_marginal_loghr;
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

type DemoResult<T> = Result<T, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn run<I: for<'de> Deserialize<'de>, O: Serialize>(input: &str, f: impl Fn(I) -> DemoResult<O>) -> Result<String, JsValue> {
    let parsed: I = serde_json::from_str(input).map_err(|e| JsValue::from_str(&e.to_string()))?;
    let output = f(parsed).map_err(|e| JsValue::from_str(&e))?;
    serde_json::to_string(&output).map_err(|e| JsValue::from_str(&e.to_string()))
}

#[derive(Debug, Deserialize)]
pub struct DatasetRequest {
    pub scenario: usize,
    #[serde(default = "default_mt")]
    pub mt_size: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_mt() -> usize {
    16
}

impl DatasetRequest {
    fn dataset(&self) -> DemoResult<TrialData> {
        if self.mt_size == 0 || self.mt_size > 500 {
            return Err("MT size must lie in 1..=500".into());
        }
        let spec = builtin_scenario(self.scenario).map_err(err)?.with_mt_size(self.mt_size);
        gen_dataset(&spec, self.seed).map_err(err)
    }
}

#[derive(Debug, Serialize, PartialEq)]
pub struct Curve {
    pub arm: String,
    pub n: usize,
    pub events: usize,
    /// Step function: survival `survival[i]` holds from `times[i]` on.
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
}

/// Kaplan-Meier estimate from (time, event) pairs.
pub fn kaplan_meier(mut obs: Vec<(f64, bool)>) -> (Vec<f64>, Vec<f64>) {
    obs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut times = vec![0.0];
    let mut survival = vec![1.0];
    let mut at_risk = obs.len();
    let mut s = 1.0;
    let mut i = 0;
    while i < obs.len() {
        let t = obs[i].0;
        let (mut deaths, mut leaving) = (0, 0);
        while i < obs.len() && obs[i].0 == t {
            deaths += usize::from(obs[i].1);
            leaving += 1;
            i += 1;
        }
        if deaths > 0 {
            s *= 1.0 - deaths as f64 / at_risk as f64;
            times.push(t);
            survival.push(s);
        }
        at_risk -= leaving;
    }
    (times, survival)
}

pub fn km_curves_native(req: &DatasetRequest) -> DemoResult<Vec<Curve>> {
    let data = req.dataset()?;
    Ok(Source::ALL
        .into_iter()
        .map(|source| {
            let obs: Vec<(f64, bool)> = data
                .subjects
                .iter()
                .filter(|s| s.source == source)
                .map(|s| (s.time, s.event))
                .collect();
            let events = obs.iter().filter(|o| o.1).count();
            let n = obs.len();
            let (times, survival) = kaplan_meier(obs);
            Curve {
                arm: source.label().to_string(),
                n,
                events,
                times,
                survival,
            }
        })
        .collect())
}

/// Kaplan-Meier curves of the four arms of one simulated trial.
#[wasm_bindgen]
pub fn km_curves(request: &str) -> Result<String, JsValue> {
    run(request, |r: DatasetRequest| km_curves_native(&r))
}

#[derive(Debug, Deserialize)]
pub struct CollapseRequest {
    /// Conditional log hazard ratios to evaluate.
    pub log_hr: Vec<f64>,
    /// Multiplier on the prognostic covariate effects.
    #[serde(default = "one")]
    pub gamma_scale: f64,
    #[serde(default = "default_truth_reps")]
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

fn default_truth_reps() -> usize {
    40
}

#[derive(Debug, Serialize, PartialEq)]
pub struct CollapsePoint {
    pub conditional: f64,
    pub marginal: f64,
    pub mcse: f64,
}

pub fn noncollapsibility_native(req: &CollapseRequest) -> DemoResult<Vec<CollapsePoint>> {
    if req.log_hr.len() > 25 || !(2..=2000).contains(&req.reps) {
        return Err("use at most 25 effects and 2..=2000 repetitions".into());
    }
    let base = builtin_scenario(2).map_err(err)?;
    req.log_hr
        .iter()
        .map(|&b| {
            let mut spec = base.clone();
            spec.beta[0] = b;
            spec.gamma.iter_mut().for_each(|g| *g *= req.gamma_scale);
            let truth = true_marginal_loghr(&spec, req.reps, req.seed).map_err(err)?;
            Ok(CollapsePoint {
                conditional: b,
                marginal: truth.theta0,
                mcse: truth.mcse,
            })
        })
        .collect()
}

/// Marginal against conditional log hazard ratio under covariate
/// heterogeneity.
#[wasm_bindgen]
pub fn noncollapsibility(request: &str) -> Result<String, JsValue> {
    run(request, |r: CollapseRequest| noncollapsibility_native(&r))
}

#[derive(Debug, Deserialize)]
pub struct PosteriorRequest {
    #[serde(flatten)]
    pub dataset: DatasetRequest,
    #[serde(default = "all_variants")]
    pub variants: Vec<BorrowVariant>,
    #[serde(default = "default_iters")]
    pub iterations: usize,
}

fn all_variants() -> Vec<BorrowVariant> {
    BorrowVariant::ALL.to_vec()
}

fn default_iters() -> usize {
    1000
}

#[derive(Debug, Serialize, PartialEq)]
pub struct PosteriorView {
    pub variant: String,
    pub mean: f64,
    pub sd: f64,
    pub rhat: f64,
    /// Histogram of delta draws over `[lo, hi]`.
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

const BINS: usize = 40;

pub fn posterior_delta_native(req: &PosteriorRequest) -> DemoResult<Vec<PosteriorView>> {
    if !(50..=20_000).contains(&req.iterations) {
        return Err("iterations must lie in 50..=20000".into());
    }
    let data = req.dataset.dataset()?;
    let bayes = BayesData::from_trial(&data).map_err(err)?;
    let mut out = Vec::new();
    for (k, &variant) in req.variants.iter().enumerate() {
        let options = McmcOptions {
            chains: 2,
            adapt_iters: req.iterations / 2,
            sample_iters: req.iterations,
            seed: req.dataset.seed.wrapping_add(k as u64),
            ..Default::default()
        };
        let post = mcmc_sample(&bayes, variant, &options).map_err(err)?;
        let draws = post.delta();
        let (mean, var) = post.summary();
        out.push(histogram(variant.label(), &draws, mean, var, post.delta_rhat()));
    }
    Ok(out)
}

fn histogram(label: &str, draws: &[f64], mean: f64, var: f64, rhat: f64) -> PosteriorView {
    let lo = draws.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = draws.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo).max(1e-12) / BINS as f64;
    let mut counts = vec![0; BINS];
    for &d in draws {
        counts[(((d - lo) / width) as usize).min(BINS - 1)] += 1;
    }
    PosteriorView {
        variant: label.to_string(),
        mean,
        sd: var.sqrt(),
        rhat,
        lo,
        hi,
        counts,
    }
}

/// Posterior of the treatment effect under each borrowing prior for one
/// simulated trial.
#[wasm_bindgen]
pub fn posterior_delta(request: &str) -> Result<String, JsValue> {
    run(request, |r: PosteriorRequest| posterior_delta_native(&r))
}
