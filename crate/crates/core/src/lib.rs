//! Simulation engine and estimators for hybrid control arms in small
//! oncology trials: three-source survival data, propensity-score weighting
//! and full matching, Weibull/Cox outcome fits, commensurate-prior Bayesian
//! borrowing, a counterfactual truth oracle and a replicated study harness.

pub mod bayes;
pub mod datagen;
pub mod error;
pub mod fullmatch;
pub mod harness;
pub mod metrics;
mod optim;
pub mod propensity;
pub mod rng;
pub mod survfit;
pub mod truth;
pub mod weights;

pub use error::{Error, FitError, Result};
