use std::path::PathBuf;

use crate::datagen::Source;

/// Failures of the numerical fitters (logistic, Cox, Weibull AFT).
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FitError {
    #[error("complete or quasi-complete separation: coefficients diverge")]
    Separation,
    #[error("weighted normal equations are rank-deficient")]
    Singular,
    #[error("no convergence after {iterations} iterations")]
    NoConverge { iterations: usize },
    #[error("likelihood is maximized at infinity (monotone likelihood)")]
    Monotone,
    #[error("estimated scale {sigma:e} is degenerate")]
    DegenerateScale { sigma: f64 },
    #[error("invalid input: {0}")]
    Invalid(String),
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid specification: {0}")]
    Spec(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("arm {0} has no subjects")]
    EmptyArm(Source),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error("MCMC mixing failure: split R-hat for delta is {rhat:.3}")]
    MixingFailure { rhat: f64 },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
