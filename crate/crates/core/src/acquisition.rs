//! Acquisition functions under the minimization convention, and exhaustive
//! selection of the next configuration over the finite grid.

use std::collections::HashSet;
use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::catalog::{normalize_coordinates, CloudConfiguration, ConfigurationSpace};
use crate::error::{Error, Result};
use crate::surrogate::{Posterior, Surrogate};

pub const DEFAULT_KAPPA: f64 = 2.0;
pub const DEFAULT_XI: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AcquisitionKind {
    Ei,
    Mpi,
    Lcb,
}

impl AcquisitionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AcquisitionKind::Ei => "ei",
            AcquisitionKind::Mpi => "mpi",
            AcquisitionKind::Lcb => "lcb",
        }
    }
}

impl fmt::Display for AcquisitionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AcquisitionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ei" => Ok(AcquisitionKind::Ei),
            "mpi" => Ok(AcquisitionKind::Mpi),
            "lcb" => Ok(AcquisitionKind::Lcb),
            other => Err(Error::validation(format!("unknown acquisition `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionSpec {
    pub kind: AcquisitionKind,
    #[serde(default)]
    pub xi: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
}

fn default_kappa() -> f64 {
    DEFAULT_KAPPA
}

impl AcquisitionSpec {
    pub fn new(kind: AcquisitionKind) -> Self {
        Self {
            kind,
            xi: DEFAULT_XI,
            kappa: DEFAULT_KAPPA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.xi.is_finite() && self.xi >= 0.0) {
            return Err(Error::validation(format!("xi must be >= 0, got {}", self.xi)));
        }
        if !(self.kappa.is_finite() && self.kappa >= 0.0) {
            return Err(Error::validation(format!("kappa must be >= 0, got {}", self.kappa)));
        }
        Ok(())
    }

    /// Raw acquisition value (EI, probability, or bound).
    pub fn score(&self, post: &Posterior, best: f64) -> f64 {
        match self.kind {
            AcquisitionKind::Ei => expected_improvement(post, best, self.xi),
            AcquisitionKind::Mpi => probability_of_improvement(post, best, self.xi),
            AcquisitionKind::Lcb => lower_confidence_bound(post, self.kappa),
        }
    }

    /// Score oriented so that larger is always more promising.
    pub fn utility(&self, post: &Posterior, best: f64) -> f64 {
        match self.kind {
            AcquisitionKind::Lcb => -self.score(post, best),
            _ => self.score(post, best),
        }
    }
}

pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

pub fn expected_improvement(post: &Posterior, best: f64, xi: f64) -> f64 {
    let gain = best - post.mean - xi;
    if post.stddev == 0.0 {
        return gain.max(0.0);
    }
    let z = gain / post.stddev;
    (gain * std_normal_cdf(z) + post.stddev * std_normal_pdf(z)).max(0.0)
}

pub fn probability_of_improvement(post: &Posterior, best: f64, xi: f64) -> f64 {
    if post.stddev == 0.0 {
        return if post.mean + xi < best { 1.0 } else { 0.0 };
    }
    std_normal_cdf((best - post.mean - xi) / post.stddev).clamp(0.0, 1.0)
}

pub fn lower_confidence_bound(post: &Posterior, kappa: f64) -> f64 {
    post.mean - kappa * post.stddev
}

/// Index of the best utility; exact ties are broken uniformly with `rng`.
pub fn argmax_with_ties<R: Rng + ?Sized>(utilities: &[f64], rng: &mut R) -> Option<usize> {
    let top = utilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ties: Vec<usize> = utilities
        .iter()
        .enumerate()
        .filter(|(_, u)| **u == top)
        .map(|(k, _)| k)
        .collect();
    match ties.len() {
        0 => None,
        1 => Some(ties[0]),
        m => Some(ties[rng.random_range(0..m)]),
    }
}

/// Scores every configuration not in `observed ∪ infeasible` and returns the
/// most promising one.
pub fn select_next<S, R>(
    surrogate: &S,
    space: &ConfigurationSpace,
    spec: &AcquisitionSpec,
    observed: &HashSet<CloudConfiguration>,
    infeasible: &HashSet<CloudConfiguration>,
    best: f64,
    rng: &mut R,
) -> Result<CloudConfiguration>
where
    S: Surrogate + ?Sized,
    R: Rng + ?Sized,
{
    spec.validate()?;
    let candidates: Vec<CloudConfiguration> = space
        .configs()
        .filter(|c| !observed.contains(c) && !infeasible.contains(c))
        .collect();
    if candidates.is_empty() {
        return Err(Error::Exhausted);
    }
    let utilities = candidates
        .iter()
        .map(|&c| {
            let post = surrogate.predict(normalize_coordinates(space, c)?);
            let u = spec.utility(&post, best);
            // NaN would silently drop out of the argmax.
            if u.is_nan() {
                return Err(Error::Numeric(format!("acquisition is NaN at {c:?}")));
            }
            Ok(u)
        })
        .collect::<Result<Vec<f64>>>()?;
    let k = argmax_with_ties(&utilities, rng).ok_or(Error::Exhausted)?;
    Ok(candidates[k])
}
