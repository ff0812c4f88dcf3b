//! Cost model, paramount-iteration extrapolation and charge accounting.
//!
//! The cost of a configuration is `runtime × hourly price × instance count`.
//! An early-stopped observation executes only the first few paramount
//! iterations (PIs) of the application's main loop: its runtime estimate is
//! extrapolated from the measured iterations, but only the executed time is
//! charged.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::catalog::{csv_error, parse_field, CloudConfiguration};
use crate::error::{Error, Result};

/// Number of paramount iterations executed before an early stop.
pub const DEFAULT_PI_COUNT: usize = 4;

/// USD for running `n` instances at `price_usd_hour` for `runtime_s` seconds.
pub fn config_cost(runtime_s: f64, price_usd_hour: f64, n: u32) -> Result<f64> {
    if !(runtime_s >= 0.0 && runtime_s.is_finite()) {
        return Err(Error::validation(format!("runtime must be >= 0, got {runtime_s}")));
    }
    if !(price_usd_hour > 0.0 && price_usd_hour.is_finite()) {
        return Err(Error::validation(format!("price must be > 0, got {price_usd_hour}")));
    }
    if n < 1 {
        return Err(Error::validation("instance count must be >= 1"));
    }
    Ok(runtime_s / 3600.0 * price_usd_hour * f64::from(n))
}

/// Per-iteration timings of the first paramount iterations of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiMeasurement {
    pub iteration_times_s: Vec<f64>,
    /// Paramount iterations the complete run would execute.
    pub total_iterations: u32,
}

impl PiMeasurement {
    pub fn new(iteration_times_s: Vec<f64>, total_iterations: u32) -> Result<Self> {
        let pi = Self {
            iteration_times_s,
            total_iterations,
        };
        pi.validate()?;
        Ok(pi)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iteration_times_s.is_empty() {
            return Err(Error::validation("paramount-iteration list is empty"));
        }
        if let Some(t) = self.iteration_times_s.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return Err(Error::validation(format!("iteration times must be > 0, got {t}")));
        }
        if (self.total_iterations as usize) < self.iteration_times_s.len() {
            return Err(Error::validation(format!(
                "total_iterations {} is smaller than the {} measured iterations",
                self.total_iterations,
                self.iteration_times_s.len()
            )));
        }
        Ok(())
    }

    fn executed_s(&self) -> f64 {
        self.iteration_times_s.iter().sum()
    }
}

/// Full-run runtime extrapolated as mean iteration time × total iterations.
pub fn pi_runtime_estimate(pi: &PiMeasurement) -> Result<f64> {
    pi.validate()?;
    let mean = pi.executed_s() / pi.iteration_times_s.len() as f64;
    Ok(mean * f64::from(pi.total_iterations))
}

/// What an early-stopped observation costs: only the executed iterations.
pub fn pi_charge(pi: &PiMeasurement, price_usd_hour: f64, n: u32) -> Result<f64> {
    pi.validate()?;
    config_cost(pi.executed_s(), price_usd_hour, n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ObservationMode {
    /// Run to completion.
    #[default]
    Full,
    /// Stop after the first paramount iterations.
    Pi,
}

impl ObservationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ObservationMode::Full => "full",
            ObservationMode::Pi => "pi",
        }
    }
}

impl fmt::Display for ObservationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ObservationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(ObservationMode::Full),
            "pi" => Ok(ObservationMode::Pi),
            other => Err(Error::validation(format!("unknown observation mode `{other}`"))),
        }
    }
}

/// One evaluated configuration.
///
/// For infeasible configurations `runtime_estimate_s` and `objective_cost_usd`
/// are zero and only the failure charge is meaningful.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub config: CloudConfiguration,
    pub runtime_estimate_s: f64,
    /// Money actually spent making this observation.
    pub charged_cost_usd: f64,
    /// Cost of the complete run, the quantity being minimized.
    pub objective_cost_usd: f64,
    pub feasible: bool,
    pub mode: ObservationMode,
}

impl Observation {
    pub fn infeasible(config: CloudConfiguration, mode: ObservationMode, charge_usd: f64) -> Self {
        Self {
            config,
            runtime_estimate_s: 0.0,
            charged_cost_usd: charge_usd,
            objective_cost_usd: 0.0,
            feasible: false,
            mode,
        }
    }
}

/// Share of the full execution time consumed by the first four PIs, per
/// workload kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiFractionTable {
    fractions: BTreeMap<String, f64>,
}

impl Default for PiFractionTable {
    /// Measured NPB values; EP ("less than 1%") is pinned to 0.01.
    fn default() -> Self {
        let fractions = [("cg", 0.0443), ("ft", 0.1733), ("mg", 0.12), ("is", 0.40), ("ep", 0.01)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        Self { fractions }
    }
}

impl PiFractionTable {
    /// Reads a `workload,fraction` CSV.
    pub fn load<R: Read>(source: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(source);
        let header = reader.headers().map_err(|e| csv_error(e, 1))?.clone();
        if header.iter().collect::<Vec<_>>() != ["workload", "fraction"] {
            return Err(Error::parse(1, "expected header `workload,fraction`"));
        }
        let mut fractions = BTreeMap::new();
        for record in reader.records() {
            let record = record.map_err(|e| csv_error(e, 0))?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            if record.len() != 2 {
                return Err(Error::parse(line, "expected 2 fields"));
            }
            let fraction: f64 = parse_field(&record[1], "fraction", line)?;
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(Error::parse(
                    line,
                    format!("fraction must lie in (0,1], got {fraction}"),
                ));
            }
            let key = record[0].to_ascii_lowercase();
            if fractions.insert(key.clone(), fraction).is_some() {
                return Err(Error::validation(format!("duplicate workload `{key}` at line {line}")));
            }
        }
        if fractions.is_empty() {
            return Err(Error::validation("PI-fraction file has no rows"));
        }
        Ok(Self { fractions })
    }

    /// Looks up a workload. Ids of the form `kernel/class` fall back to the
    /// kernel entry.
    pub fn pi_fraction(&self, workload: &str) -> Result<f64> {
        let key = workload.to_ascii_lowercase();
        self.fractions
            .get(&key)
            .or_else(|| key.split('/').next().and_then(|k| self.fractions.get(k)))
            .copied()
            .ok_or_else(|| Error::Lookup(format!("no PI fraction for workload `{workload}`")))
    }

    pub fn mean(&self) -> f64 {
        self.fractions.values().sum::<f64>() / self.fractions.len() as f64
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.fractions.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Default-table lookup.
pub fn pi_fraction(workload: &str) -> Result<f64> {
    PiFractionTable::default().pi_fraction(workload)
}
