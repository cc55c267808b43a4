//! Marginal log hazard ratio by counterfactual simulation.
//!
//! Each repetition draws a current-trial population, gives every subject
//! both potential outcomes and regresses the stacked outcomes on treatment
//! with an unweighted Cox model. Conditional effects do not survive this
//! marginalization unchanged when covariates act on the hazard.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::Open01;
use serde::{Deserialize, Serialize};

use crate::datagen::{gen_covariates, gen_event_time, linear_predictor, ScenarioSpec, Source};
use crate::error::{Error, Result};
use crate::rng;
use crate::survfit::{fit_cox_weighted, Design, SurvivalSample, TrialFactor};

/// Subjects per repetition; the stacked data set has twice as many rows.
pub const POPULATION: usize = 200;
pub const DEFAULT_REPS: usize = 10_000;
const MAX_ATTEMPTS: u64 = 100;
const TRUTH_LABEL: u64 = 0x7472_7574;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthResult {
    pub scenario: String,
    pub theta0: f64,
    pub reps: usize,
    pub mcse: f64,
    /// Repetitions redrawn after a failed fit.
    #[serde(default)]
    pub resampled: usize,
}

/// One repetition's coefficient; `None` if the fit failed.
fn repetition(scenario: &ScenarioSpec, seed: u64, rep: u64, attempt: u64) -> Result<Option<f64>> {
    let mut stream = rng::stream(seed, &[TRUTH_LABEL, rep, attempt]);
    let rows = gen_covariates(&scenario.covariates, Source::Mc, POPULATION, &mut stream)?;
    let mut samples = Vec::with_capacity(2 * POPULATION);
    for x in &rows {
        for (source, treatment) in [(Source::Mt, 1u8), (Source::Mc, 0u8)] {
            let eta = linear_predictor(x, source, treatment, scenario);
            let u: f64 = stream.sample(Open01);
            samples.push(SurvivalSample {
                time: gen_event_time(eta, scenario.shape_p, u)?,
                event: true,
                treatment,
                trial: TrialFactor::Current,
                weight: 1.0,
            });
        }
    }
    Ok(fit_cox_weighted(&samples, Design::Treatment).ok().map(|f| f.log_hr))
}

fn resolved_repetition(scenario: &ScenarioSpec, seed: u64, rep: u64) -> Result<(f64, usize)> {
    for attempt in 0..MAX_ATTEMPTS {
        if let Some(v) = repetition(scenario, seed, rep, attempt)? {
            return Ok((v, attempt as usize));
        }
    }
    Err(Error::Spec(format!("oracle fits failed {MAX_ATTEMPTS} times in a row")))
}

pub fn true_marginal_loghr(scenario: &ScenarioSpec, reps: usize, seed: u64) -> Result<TruthResult> {
    scenario.validate()?;
    if reps < 2 {
        return Err(Error::Argument("the truth oracle needs at least 2 repetitions".into()));
    }
    let run = |rep: usize| resolved_repetition(scenario, seed, rep as u64);
    #[cfg(feature = "parallel")]
    let values: Vec<(f64, usize)> = {
        use rayon::prelude::*;
        (0..reps).into_par_iter().map(run).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let values: Vec<(f64, usize)> = (0..reps).map(run).collect::<Result<_>>()?;

    let n = reps as f64;
    let theta0 = values.iter().map(|v| v.0).sum::<f64>() / n;
    let var = values.iter().map(|v| (v.0 - theta0).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(TruthResult {
        scenario: scenario.name.clone(),
        theta0,
        reps,
        mcse: (var / n).sqrt(),
        resampled: values.iter().map(|v| v.1).sum(),
    })
}

/// Truth values keyed by scenario name, persisted as
/// `scenario,theta0,reps,mcse`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TruthCache {
    entries: BTreeMap<String, TruthResult>,
}

#[derive(Serialize, Deserialize)]
struct CacheRow {
    scenario: String,
    theta0: f64,
    reps: usize,
    mcse: f64,
}

impl TruthCache {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Ok(Self::default());
        }
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut entries = BTreeMap::new();
        for row in csv::Reader::from_reader(file).deserialize() {
            let row: CacheRow = row?;
            entries.insert(
                row.scenario.clone(),
                TruthResult {
                    scenario: row.scenario,
                    theta0: row.theta0,
                    reps: row.reps,
                    mcse: row.mcse,
                    resampled: 0,
                },
            );
        }
        Ok(TruthCache { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        for t in self.entries.values() {
            w.serialize(CacheRow {
                scenario: t.scenario.clone(),
                theta0: t.theta0,
                reps: t.reps,
                mcse: t.mcse,
            })?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// A cached value computed with at least `reps` repetitions.
    pub fn get(&self, scenario: &str, reps: usize) -> Option<&TruthResult> {
        self.entries.get(scenario).filter(|t| t.reps >= reps)
    }

    pub fn insert(&mut self, truth: TruthResult) {
        self.entries.insert(truth.scenario.clone(), truth);
    }

    pub fn get_or_compute(&mut self, scenario: &ScenarioSpec, reps: usize, seed: u64) -> Result<TruthResult> {
        if let Some(t) = self.get(&scenario.name, reps) {
            return Ok(t.clone());
        }
        let t = true_marginal_loghr(scenario, reps, seed)?;
        self.insert(t.clone());
        Ok(t)
    }

    pub fn iter(&self) -> impl Iterator<Item = &TruthResult> {
        self.entries.values()
    }
}
