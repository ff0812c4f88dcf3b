//! Probabilistic regressors over the normalized grid.
//!
//! Both models predict log objective cost together with an uncertainty
//! estimate, which is all the acquisition functions need.

mod gp;
mod rf;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use gp::{
    gp_fit, gp_predict, log_marginal_likelihood, log_marginal_likelihood_gradient, matern52, GpHyperparams, GpModel,
    HyperBounds, GP_RESTARTS,
};
pub use rf::{rf_fit, rf_fit_with, rf_predict, RegressionTree, RfModel, RfParams, TreeNode};

/// Predictive distribution at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub mean: f64,
    pub stddev: f64,
}

impl Posterior {
    pub fn new(mean: f64, stddev: f64) -> Result<Self> {
        if !mean.is_finite() || !stddev.is_finite() || stddev < 0.0 {
            return Err(Error::Numeric(format!("invalid posterior ({mean}, {stddev})")));
        }
        Ok(Self { mean, stddev })
    }
}

pub trait Surrogate: Send + Sync {
    fn predict(&self, point: [f64; 2]) -> Posterior;
}

impl Surrogate for GpModel {
    fn predict(&self, point: [f64; 2]) -> Posterior {
        gp_predict(self, point)
    }
}

impl Surrogate for RfModel {
    fn predict(&self, point: [f64; 2]) -> Posterior {
        rf_predict(self, point)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurrogateKind {
    Gp,
    Rf,
}

impl SurrogateKind {
    /// Fits a model of this kind. `seed` only matters for the forest.
    pub fn fit(self, points: &[[f64; 2]], targets: &[f64], seed: u64) -> Result<FittedSurrogate> {
        Ok(match self {
            SurrogateKind::Gp => FittedSurrogate::Gp(gp_fit(points, targets)?),
            SurrogateKind::Rf => FittedSurrogate::Rf(rf_fit(points, targets, seed)?),
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SurrogateKind::Gp => "gp",
            SurrogateKind::Rf => "rf",
        }
    }
}

impl fmt::Display for SurrogateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SurrogateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gp" => Ok(SurrogateKind::Gp),
            "rf" => Ok(SurrogateKind::Rf),
            other => Err(Error::validation(format!("unknown surrogate `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub enum FittedSurrogate {
    Gp(GpModel),
    Rf(RfModel),
}

impl FittedSurrogate {
    /// Diagnostic `key=value` dump of the fitted hyperparameters.
    pub fn dump(&self) -> String {
        match self {
            FittedSurrogate::Gp(m) => m.dump(),
            FittedSurrogate::Rf(m) => m.dump(),
        }
    }
}

impl Surrogate for FittedSurrogate {
    fn predict(&self, point: [f64; 2]) -> Posterior {
        match self {
            FittedSurrogate::Gp(m) => gp_predict(m, point),
            FittedSurrogate::Rf(m) => rf_predict(m, point),
        }
    }
}

pub(crate) fn check_training_set(points: &[[f64; 2]], targets: &[f64]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::validation("surrogate needs at least one training point"));
    }
    if points.len() != targets.len() {
        return Err(Error::validation(format!(
            "{} points but {} targets",
            points.len(),
            targets.len()
        )));
    }
    if let Some(t) = targets.iter().find(|t| !t.is_finite()) {
        return Err(Error::validation(format!("non-finite training target {t}")));
    }
    if let Some(p) = points.iter().find(|p| !p.iter().all(|v| (0.0..=1.0).contains(v))) {
        return Err(Error::validation(format!("training point {p:?} lies outside [0,1]²")));
    }
    Ok(())
}
