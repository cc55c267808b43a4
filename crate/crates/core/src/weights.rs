use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::datagen::TrialData;
use crate::error::{Error, Result};
use crate::metrics;

/// Which propensity-score scheme produced a weight set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WeightMethod {
    #[serde(rename = "SFM")]
    Sfm,
    #[serde(rename = "SIPTW")]
    Siptw,
    #[serde(rename = "JFM")]
    Jfm,
    #[serde(rename = "JIPTW")]
    Jiptw,
}

impl WeightMethod {
    pub const ALL: [WeightMethod; 4] = [WeightMethod::Sfm, WeightMethod::Siptw, WeightMethod::Jfm, WeightMethod::Jiptw];

    pub fn label(self) -> &'static str {
        match self {
            WeightMethod::Sfm => "SFM",
            WeightMethod::Siptw => "SIPTW",
            WeightMethod::Jfm => "JFM",
            WeightMethod::Jiptw => "JIPTW",
        }
    }

    /// Joint schemes add the trial factor Q to the outcome regression.
    pub fn is_joint(self) -> bool {
        matches!(self, WeightMethod::Jfm | WeightMethod::Jiptw)
    }
}

/// Per-subject analysis weights, aligned with `TrialData::subjects`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSet {
    pub method: WeightMethod,
    pub weights: Vec<f64>,
    /// Propensity score that produced each historical subject's weight.
    pub ps: Vec<Option<f64>>,
    /// Kish effective sample size of the historical weights.
    pub htd_ess: f64,
}

impl WeightSet {
    pub(crate) fn new(method: WeightMethod, data: &TrialData, weights: Vec<f64>, ps: Vec<Option<f64>>) -> Result<Self> {
        debug_assert_eq!(weights.len(), data.subjects.len());
        let htd: Vec<f64> = data
            .subjects
            .iter()
            .zip(&weights)
            .filter(|(s, _)| s.source.is_historical())
            .map(|(_, &w)| w)
            .collect();
        if htd.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Argument(format!("{} produced a negative or non-finite weight", method.label())));
        }
        let htd_ess = if htd.iter().any(|&w| w > 0.0) {
            metrics::ess_frequentist(&htd)?
        } else {
            0.0
        };
        Ok(WeightSet {
            method,
            weights,
            ps,
            htd_ess,
        })
    }

    pub fn requires_trial_factor(&self) -> bool {
        self.method.is_joint()
    }

    /// Audit export: `id,method,ps,weight`.
    pub fn write_csv<W: Write>(&self, data: &TrialData, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["id", "method", "ps", "weight"])?;
        for ((s, weight), ps) in data.subjects.iter().zip(&self.weights).zip(&self.ps) {
            let ps = ps.map(|p| p.to_string()).unwrap_or_default();
            w.write_record([s.id.to_string(), self.method.label().to_string(), ps, weight.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}
