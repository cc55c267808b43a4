//! Replicated simulation studies: scenario catalog, method dispatch,
//! deterministic (and optionally parallel) replication, aggregation.

mod report;

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::bayes::{self, BayesData, BorrowVariant, McmcOptions, SameForm};
use crate::datagen::{gen_dataset, ScenarioSpec, Source, TrialData};
use crate::error::{Error, Result};
use crate::fullmatch;
use crate::metrics::{self, MethodSummary};
use crate::propensity::{self, PropensityScores, PsOptions};
use crate::rng;
use crate::survfit::{self, SurvivalModel};
use crate::truth::{TruthCache, TruthResult};
use crate::weights::{WeightMethod, WeightSet};

pub use report::{
    best_method, emit_report, read_summary_csv, render_table, write_long_csv, write_replication_csv,
    write_summary_csv, Metric, OutputFormat,
};

const CELL_LABEL: u64 = 0x63_656c6c;
const TRUTH_LABEL: u64 = 0x74_7275_7468;
const BAYES_LABEL: u64 = 0x62_6179_6573;

/// Analysis families, in report order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    Bayesian,
    Aft,
    Cox,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Bayesian, Family::Aft, Family::Cox];

    pub fn title(self) -> &'static str {
        match self {
            Family::Bayesian => "Bayesian Weibull",
            Family::Aft => "Frequentist Weibull (AFT)",
            Family::Cox => "Frequentist (Cox)",
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            Family::Bayesian => "Bayesian",
            Family::Aft => "AFT",
            Family::Cox => "Cox",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Frequentist(WeightMethod, SurvivalModel),
    Bayes(BorrowVariant),
}

impl Method {
    /// All sixteen estimators in report order.
    pub fn all() -> Vec<Method> {
        use BorrowVariant::*;
        let mut methods: Vec<Method> = [Ipd, Ips, Npd, Nps, Wpd, Wps, Fb, Nb].into_iter().map(Method::Bayes).collect();
        for model in [SurvivalModel::Aft, SurvivalModel::Cox] {
            methods.extend(WeightMethod::ALL.into_iter().map(|w| Method::Frequentist(w, model)));
        }
        methods
    }

    pub fn label(self) -> String {
        match self {
            Method::Frequentist(w, m) => format!("{}.{}", w.label(), m.label()),
            Method::Bayes(v) => v.label().to_string(),
        }
    }

    pub fn family(self) -> Family {
        match self {
            Method::Frequentist(_, SurvivalModel::Aft) => Family::Aft,
            Method::Frequentist(_, SurvivalModel::Cox) => Family::Cox,
            Method::Bayes(_) => Family::Bayesian,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    /// Accepts `JIPTW.Cox`, `jiptw-cox`, `NB`, ...
    fn from_str(s: &str) -> Result<Self> {
        let normalized = s.trim().replace(['-', '_', ' '], ".");
        Method::all()
            .into_iter()
            .find(|m| m.label().eq_ignore_ascii_case(&normalized))
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

impl Serialize for Method {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.label())
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Scenarios 1-4, named by their number.
pub fn builtin_scenarios() -> Vec<ScenarioSpec> {
    let l = f64::ln;
    [
        [0.0, 0.0, 0.0],
        [l(0.5), 0.0, 0.0],
        [l(0.5), l(3.0), l(3.0)],
        [l(0.5), l(12.0), l(3.0)],
    ]
    .into_iter()
    .enumerate()
    .map(|(i, beta)| ScenarioSpec::new((i + 1).to_string(), beta))
    .collect()
}

pub fn builtin_scenario(number: usize) -> Result<ScenarioSpec> {
    builtin_scenarios()
        .into_iter()
        .nth(number.wrapping_sub(1))
        .ok_or_else(|| Error::Config(format!("no built-in scenario {number} (expected 1-4)")))
}

/// A scenario given by catalog number or spelled out in full.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioEntry {
    Builtin(usize),
    Custom(Box<ScenarioSpec>),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcSettings {
    pub chains: usize,
    pub adapt_iters: usize,
    pub sample_iters: usize,
    pub same_form: SameForm,
}

impl Default for McmcSettings {
    fn default() -> Self {
        let d = McmcOptions::default();
        McmcSettings {
            chains: d.chains,
            adapt_iters: d.adapt_iters,
            sample_iters: d.sample_iters,
            same_form: d.same_form,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default = "default_scenarios")]
    pub scenarios: Vec<ScenarioEntry>,
    #[serde(default = "default_mt_sizes")]
    pub mt_sizes: Vec<usize>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "Method::all")]
    pub methods: Vec<Method>,
    #[serde(default = "default_truth_reps")]
    pub truth_reps: usize,
    /// Worker threads; 0 lets the pool decide. Never affects results.
    #[serde(default)]
    pub threads: usize,
    #[serde(default)]
    pub mcmc: McmcSettings,
    #[serde(default)]
    pub full_ps_model: bool,
    /// Largest tolerated fraction of failed replications in any cell.
    #[serde(default = "default_failure_threshold")]
    pub failure_threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

fn default_scenarios() -> Vec<ScenarioEntry> {
    (1..=4).map(ScenarioEntry::Builtin).collect()
}
fn default_mt_sizes() -> Vec<usize> {
    vec![16, 40]
}
fn default_reps() -> usize {
    500
}
fn default_truth_reps() -> usize {
    crate::truth::DEFAULT_REPS
}
fn default_failure_threshold() -> f64 {
    0.5
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            scenarios: default_scenarios(),
            mt_sizes: default_mt_sizes(),
            reps: default_reps(),
            seed: 0,
            methods: Method::all(),
            truth_reps: default_truth_reps(),
            threads: 0,
            mcmc: McmcSettings::default(),
            full_ps_model: false,
            failure_threshold: default_failure_threshold(),
            out_dir: None,
        }
    }
}

impl StudyConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: StudyConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.reps < 2 {
            return fail("reps must be at least 2");
        }
        if self.methods.is_empty() {
            return fail("method list is empty");
        }
        if self.mt_sizes.is_empty() || self.mt_sizes.contains(&0) {
            return fail("MT sizes must be a nonempty list of positive sizes");
        }
        if self.truth_reps < 2 {
            return fail("truth_reps must be at least 2");
        }
        if self.mcmc.chains == 0 || self.mcmc.sample_iters < 4 {
            return fail("MCMC needs at least one chain and four sampling iterations");
        }
        if !(0.0..=1.0).contains(&self.failure_threshold) {
            return fail("failure_threshold must lie in [0, 1]");
        }
        let scenarios = self.resolved_scenarios()?;
        let mut names: Vec<&str> = scenarios.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != scenarios.len() {
            return fail("scenario names must be unique");
        }
        for s in &scenarios {
            s.validate().map_err(|e| Error::Config(format!("scenario {}: {e}", s.name)))?;
        }
        Ok(())
    }

    pub fn resolved_scenarios(&self) -> Result<Vec<ScenarioSpec>> {
        if self.scenarios.is_empty() {
            return Err(Error::Config("scenario list is empty".into()));
        }
        self.scenarios
            .iter()
            .map(|e| match e {
                ScenarioEntry::Builtin(n) => builtin_scenario(*n),
                ScenarioEntry::Custom(s) => Ok((**s).clone()),
            })
            .collect()
    }

    fn ps_options(&self) -> PsOptions {
        PsOptions {
            full_ps_model: self.full_ps_model,
            ..Default::default()
        }
    }
}

/// One method's outcome in one replication.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub scenario: String,
    pub mt_size: usize,
    pub rep: usize,
    pub seed: u64,
    pub method: Method,
    pub estimate: Option<f64>,
    pub posterior_variance: Option<f64>,
    pub ess: Option<f64>,
    /// Poor MCMC mixing; the estimate is kept.
    pub flagged: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub config: StudyConfig,
    pub truths: Vec<TruthResult>,
    pub summaries: Vec<MethodSummary>,
    pub replications: Vec<ReplicationRecord>,
}

impl StudyReport {
    pub fn summary(&self, scenario: &str, mt_size: usize, method: Method) -> Option<&MethodSummary> {
        let label = method.label();
        self.summaries
            .iter()
            .find(|s| s.scenario == scenario && s.mt_size == mt_size && s.method == label)
    }

    /// Estimates of one cell in replication order, failures skipped.
    pub fn estimates(&self, scenario: &str, mt_size: usize, method: Method) -> Vec<f64> {
        self.records(scenario, mt_size, method).filter_map(|r| r.estimate).collect()
    }

    pub fn records<'a>(&'a self, scenario: &'a str, mt_size: usize, method: Method) -> impl Iterator<Item = &'a ReplicationRecord> + 'a {
        self.replications
            .iter()
            .filter(move |r| r.scenario == scenario && r.mt_size == mt_size && r.method == method)
    }

    pub fn truth(&self, scenario: &str) -> Option<&TruthResult> {
        self.truths.iter().find(|t| t.scenario == scenario)
    }

    pub fn exceeds_failure_threshold(&self) -> bool {
        self.summaries.iter().any(|s| {
            let total = s.n_used + s.n_failed;
            total > 0 && s.n_failed as f64 / total as f64 > self.config.failure_threshold
        })
    }
}

/// Seed of one replication; a function of the master seed and indices only.
pub fn replication_seed(master: u64, scenario_index: usize, mt_size: usize, rep: usize) -> u64 {
    rng::derive_seed(master, &[CELL_LABEL, scenario_index as u64, mt_size as u64, rep as u64])
}

/// Seed of the truth oracle; shared by every scenario of a study.
pub fn truth_seed(master: u64) -> u64 {
    rng::derive_seed(master, &[TRUTH_LABEL])
}

/// Lazily computed propensity models and weight sets of one dataset.
struct WeightCache<'a> {
    data: &'a TrialData,
    options: PsOptions,
    scores: HashMap<bool, std::result::Result<PropensityScores, String>>,
    sets: HashMap<WeightMethod, std::result::Result<WeightSet, String>>,
}

impl<'a> WeightCache<'a> {
    fn get(&mut self, method: WeightMethod) -> std::result::Result<&WeightSet, String> {
        if !self.sets.contains_key(&method) {
            let joint = method.is_joint();
            let data = self.data;
            let options = self.options;
            let scores = self.scores.entry(joint).or_insert_with(|| {
                if joint {
                    propensity::joint_scores(data, &options)
                } else {
                    propensity::separate_scores(data, &options)
                }
                .map_err(|e| e.to_string())
            });
            let set = match scores {
                Ok(s) => match method {
                    WeightMethod::Sfm | WeightMethod::Jfm => fullmatch::fm_from_scores(data, s),
                    WeightMethod::Siptw | WeightMethod::Jiptw => propensity::iptw_from_scores(data, s),
                }
                .map_err(|e| e.to_string()),
                Err(e) => Err(e.clone()),
            };
            self.sets.insert(method, set);
        }
        self.sets[&method].as_ref().map_err(Clone::clone)
    }
}

struct BayesOutcome {
    mean: f64,
    variance: f64,
    mixed: bool,
}

fn bayes_fit(data: &BayesData, variant: BorrowVariant, config: &StudyConfig, seed: u64) -> Result<BayesOutcome> {
    let index = BorrowVariant::ALL.iter().position(|v| *v == variant).expect("listed variant") as u64;
    let options = McmcOptions {
        chains: config.mcmc.chains,
        adapt_iters: config.mcmc.adapt_iters,
        sample_iters: config.mcmc.sample_iters,
        seed: rng::derive_seed(seed, &[BAYES_LABEL, index]),
        same_form: config.mcmc.same_form,
        fixed_tau: None,
        fixed_shape: None,
    };
    let posterior = bayes::mcmc_sample(data, variant, &options)?;
    let (mean, variance) = posterior.summary();
    Ok(BayesOutcome {
        mean,
        variance,
        mixed: posterior.mixed(),
    })
}

/// Run every configured method on one replication. Re-running with the
/// same arguments reproduces the logged records exactly.
pub fn run_replication(config: &StudyConfig, scenario: &ScenarioSpec, scenario_index: usize, mt_size: usize, rep: usize) -> Vec<ReplicationRecord> {
    let seed = replication_seed(config.seed, scenario_index, mt_size, rep);
    let record = |method: Method| ReplicationRecord {
        scenario: scenario.name.clone(),
        mt_size,
        rep,
        seed,
        method,
        estimate: None,
        posterior_variance: None,
        ess: None,
        flagged: false,
        error: None,
    };
    let data = match gen_dataset(&scenario.clone().with_mt_size(mt_size), seed) {
        Ok(d) => d,
        Err(e) => {
            return config
                .methods
                .iter()
                .map(|&m| ReplicationRecord {
                    error: Some(e.to_string()),
                    ..record(m)
                })
                .collect()
        }
    };
    let mut weights = WeightCache {
        data: &data,
        options: config.ps_options(),
        scores: HashMap::new(),
        sets: HashMap::new(),
    };
    let bayes_data = BayesData::from_trial(&data);
    let n_current = data.count(Source::Mt) + data.count(Source::Mc);
    let needs_nb = config.methods.iter().any(|m| matches!(m, Method::Bayes(_)));
    let nb = match (&bayes_data, needs_nb) {
        (Ok(bd), true) => Some(bayes_fit(bd, BorrowVariant::Nb, config, seed).map_err(|e| e.to_string())),
        _ => None,
    };

    config
        .methods
        .iter()
        .map(|&method| {
            let mut r = record(method);
            match method {
                Method::Frequentist(wm, model) => {
                    let fitted = weights.get(wm).and_then(|ws| {
                        survfit::estimate_frequentist(&data, ws, model)
                            .map(|fit| (fit.log_hr, ws.htd_ess))
                            .map_err(|e| e.to_string())
                    });
                    match fitted {
                        Ok((estimate, ess)) => {
                            r.estimate = Some(estimate);
                            r.ess = Some(ess);
                        }
                        Err(e) => r.error = Some(e),
                    }
                }
                Method::Bayes(variant) => {
                    let outcome = match (&bayes_data, variant, &nb) {
                        (Err(e), _, _) => Err(e.to_string()),
                        (_, BorrowVariant::Nb, Some(nb)) => nb.as_ref().map(|o| (o.mean, o.variance, o.mixed)).map_err(Clone::clone),
                        (Ok(bd), _, _) => bayes_fit(bd, variant, config, seed).map(|o| (o.mean, o.variance, o.mixed)).map_err(|e| e.to_string()),
                    };
                    match outcome {
                        Ok((mean, variance, mixed)) => {
                            r.estimate = Some(mean);
                            r.posterior_variance = Some(variance);
                            r.flagged = !mixed;
                            if variant != BorrowVariant::Nb {
                                if let Some(Ok(nb)) = &nb {
                                    r.ess = metrics::ess_bayesian(variance, nb.variance, n_current).ok();
                                }
                            }
                        }
                        Err(e) => r.error = Some(e),
                    }
                }
            }
            r
        })
        .collect()
}

#[cfg(feature = "parallel")]
fn map_indices<T, F>(n: usize, threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    let run = || (0..n).into_par_iter().map(&f).collect();
    if threads == 0 {
        return run();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(run),
        Err(_) => (0..n).map(&f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
fn map_indices<T, F>(n: usize, _threads: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

pub fn run_study(config: &StudyConfig) -> Result<StudyReport> {
    run_study_with_cache(config, &mut TruthCache::default())
}

/// As `run_study`, reusing and extending a truth cache.
pub fn run_study_with_cache(config: &StudyConfig, cache: &mut TruthCache) -> Result<StudyReport> {
    config.validate()?;
    let scenarios = config.resolved_scenarios()?;
    let truths = scenarios
        .iter()
        .map(|s| cache.get_or_compute(s, config.truth_reps, truth_seed(config.seed)))
        .collect::<Result<Vec<_>>>()?;

    let cells: Vec<(usize, usize)> = (0..scenarios.len())
        .flat_map(|si| config.mt_sizes.iter().map(move |&mt| (si, mt)))
        .collect();
    let n_jobs = cells.len() * config.reps;
    let per_job = map_indices(n_jobs, config.threads, |job| {
        let (si, mt) = cells[job / config.reps];
        run_replication(config, &scenarios[si], si, mt, job % config.reps)
    });
    let replications: Vec<ReplicationRecord> = per_job.into_iter().flatten().collect();

    let mut summaries = Vec::with_capacity(cells.len() * config.methods.len());
    for &(si, mt) in &cells {
        let scenario = &scenarios[si];
        for &method in &config.methods {
            let records: Vec<&ReplicationRecord> = replications
                .iter()
                .filter(|r| r.scenario == scenario.name && r.mt_size == mt && r.method == method)
                .collect();
            let estimates: Vec<f64> = records.iter().filter_map(|r| r.estimate).collect();
            let ess: Vec<f64> = records.iter().filter_map(|r| r.ess).collect();
            let s = metrics::summarize(&estimates, truths[si].theta0).unwrap_or(metrics::Summary {
                bias: f64::NAN,
                variance: f64::NAN,
                mse: f64::NAN,
            });
            summaries.push(MethodSummary {
                scenario: scenario.name.clone(),
                mt_size: mt,
                method: method.label(),
                bias: s.bias,
                variance: s.variance,
                mse: s.mse,
                ess: if ess.is_empty() {
                    f64::NAN
                } else {
                    ess.iter().sum::<f64>() / ess.len() as f64
                },
                n_used: estimates.len(),
                n_failed: records.len() - estimates.len(),
            });
        }
    }
    Ok(StudyReport {
        config: config.clone(),
        truths,
        summaries,
        replications,
    })
}
