//! Seeded synthetic cost spaces built from an Amdahl-style execution model.
//!
//! Runtime on `n` instances of a VM with `v` vCPUs and `b` Gbit/s network is
//!
//! ```text
//! T = t1 · (s + (1 − s) / (v · n)) + c · (n − 1) / b
//! ```
//!
//! multiplied by `exp(σ · z)` with `z ~ N(0, 1)`. A configuration whose total
//! memory `mem · n` is below the model's requirement is infeasible.

use std::io::Read;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::catalog::{CloudConfiguration, ConfigurationSpace, VmType};
use crate::cost::{config_cost, Observation, ObservationMode, DEFAULT_PI_COUNT};
use crate::error::{Error, Result};
use crate::search::{failure_charge, DEFAULT_FAILURE_DETECT_S};
use crate::trace::{ObservationBackend, TraceRow};

pub const DEFAULT_NOISE_SIGMA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmdahlModel {
    /// Single-core runtime in seconds.
    pub t1_s: f64,
    pub serial_fraction: f64,
    /// Communication penalty per extra node, in seconds at 1 Gbit/s.
    pub comm_coeff_s: f64,
    pub mem_req_gib: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

const MODEL_KEYS: [&str; 6] = [
    "t1_s",
    "serial_fraction",
    "comm_coeff_s",
    "mem_req_gib",
    "noise_sigma",
    "seed",
];

impl Default for AmdahlModel {
    fn default() -> Self {
        Self {
            t1_s: 36_000.0,
            serial_fraction: 0.02,
            comm_coeff_s: 100.0,
            mem_req_gib: 48.0,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            seed: 0,
        }
    }
}

impl AmdahlModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.t1_s.is_finite() && self.t1_s > 0.0) {
            return Err(Error::validation(format!("t1_s must be > 0, got {}", self.t1_s)));
        }
        if !(0.0..=1.0).contains(&self.serial_fraction) {
            return Err(Error::validation(format!(
                "serial_fraction must lie in [0,1], got {}",
                self.serial_fraction
            )));
        }
        for (what, v) in [
            ("comm_coeff_s", self.comm_coeff_s),
            ("mem_req_gib", self.mem_req_gib),
            ("noise_sigma", self.noise_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::validation(format!("{what} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Reads either `key=value` lines or a two-line CSV (header + values).
    /// `#` starts a comment. Keys other than `t1_s` and `serial_fraction`
    /// fall back to [`AmdahlModel::default`].
    pub fn load<R: Read>(mut source: R) -> Result<Self> {
        let mut text = String::new();
        source.read_to_string(&mut text)?;
        let lines: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .map(|(k, l)| (k + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty())
            .collect();
        let Some(&(_, first)) = lines.first() else {
            return Err(Error::validation("model file is empty"));
        };

        let pairs: Vec<(usize, String, String)> = if first.contains('=') {
            lines
                .iter()
                .map(|&(line, l)| {
                    let (k, v) = l
                        .split_once('=')
                        .ok_or_else(|| Error::parse(line, "expected key=value"))?;
                    Ok((line, k.trim().to_string(), v.trim().to_string()))
                })
                .collect::<Result<_>>()?
        } else {
            if lines.len() != 2 {
                return Err(Error::parse(
                    lines.get(2).map_or(1, |l| l.0),
                    "CSV model file must hold exactly one header and one value row",
                ));
            }
            let header: Vec<&str> = lines[0].1.split(',').map(str::trim).collect();
            let values: Vec<&str> = lines[1].1.split(',').map(str::trim).collect();
            if header.len() != values.len() {
                return Err(Error::parse(lines[1].0, "value count does not match header"));
            }
            header
                .into_iter()
                .zip(values)
                .map(|(k, v)| (lines[1].0, k.to_string(), v.to_string()))
                .collect()
        };

        let mut model = AmdahlModel::default();
        let mut seen = [false; 6];
        for (line, key, value) in pairs {
            let slot = MODEL_KEYS
                .iter()
                .position(|k| *k == key)
                .ok_or_else(|| Error::parse(line, format!("unknown model key `{key}`")))?;
            if std::mem::replace(&mut seen[slot], true) {
                return Err(Error::parse(line, format!("duplicate model key `{key}`")));
            }
            let num = |v: &str| v.parse::<f64>().map_err(|e| Error::parse(line, format!("{key}: {e}")));
            match slot {
                0 => model.t1_s = num(&value)?,
                1 => model.serial_fraction = num(&value)?,
                2 => model.comm_coeff_s = num(&value)?,
                3 => model.mem_req_gib = num(&value)?,
                4 => model.noise_sigma = num(&value)?,
                _ => model.seed = value.parse().map_err(|e| Error::parse(line, format!("seed: {e}")))?,
            }
        }
        if !seen[0] || !seen[1] {
            return Err(Error::validation("model file must set t1_s and serial_fraction"));
        }
        model.validate()?;
        Ok(model)
    }

    pub fn to_kv(&self) -> String {
        format!(
            "t1_s={}\nserial_fraction={}\ncomm_coeff_s={}\nmem_req_gib={}\nnoise_sigma={}\nseed={}\n",
            self.t1_s, self.serial_fraction, self.comm_coeff_s, self.mem_req_gib, self.noise_sigma, self.seed
        )
    }

    pub fn is_feasible(&self, vm: &VmType, n: u32) -> bool {
        vm.mem_gib * f64::from(n) >= self.mem_req_gib
    }

    /// Noise-free runtime, or `None` when the cluster lacks memory.
    pub fn base_runtime(&self, vm: &VmType, n: u32) -> Option<f64> {
        if !self.is_feasible(vm, n) {
            return None;
        }
        let s = self.serial_fraction;
        let cores = f64::from(vm.vcpus) * f64::from(n);
        let compute = self.t1_s * (s + (1.0 - s) / cores);
        let comm = self.comm_coeff_s * f64::from(n - 1) / vm.network_gbps;
        Some(compute + comm)
    }
}

/// Runtime with one multiplicative lognormal noise draw taken from `rng`.
/// The draw is consumed even for infeasible configurations so that noise
/// assignment does not depend on the memory requirement.
pub fn synth_runtime<R: Rng + ?Sized>(model: &AmdahlModel, vm: &VmType, n: u32, rng: &mut R) -> Option<f64> {
    let z: f64 = rng.sample(StandardNormal);
    model.base_runtime(vm, n).map(|t| {
        if model.noise_sigma > 0.0 {
            t * (model.noise_sigma * z).exp()
        } else {
            t
        }
    })
}

/// Runtimes for every grid point, in grid order; `None` marks infeasible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpace {
    pub space: ConfigurationSpace,
    pub runtimes_s: Vec<Option<f64>>,
}

impl SynthSpace {
    pub fn runtime(&self, config: CloudConfiguration) -> Result<Option<f64>> {
        Ok(self.runtimes_s[self.space.index_of(config)?])
    }

    pub fn feasible_count(&self) -> usize {
        self.runtimes_s.iter().flatten().count()
    }

    /// Objective cost for each grid point (`None` when infeasible).
    pub fn costs(&self) -> Vec<Option<f64>> {
        self.space
            .configs()
            .zip(&self.runtimes_s)
            .map(|(cfg, rt)| {
                rt.map(|t| {
                    let vm = &self.space.vms()[cfg.vm_index];
                    config_cost(t, vm.price_usd_hour, cfg.n).expect("runtime is positive")
                })
            })
            .collect()
    }

    /// Trace rows whose PI data implies `pi_fraction` of the full runtime:
    /// `pi_count` uniform iterations of `fraction · T / pi_count` seconds and
    /// `round(pi_count / fraction)` total iterations.
    pub fn to_trace(&self, workload: &str, class: &str, pi_fraction: f64, pi_count: usize) -> Result<Vec<TraceRow>> {
        if !(pi_fraction > 0.0 && pi_fraction <= 1.0) {
            return Err(Error::validation(format!(
                "PI fraction must lie in (0,1], got {pi_fraction}"
            )));
        }
        if pi_count == 0 {
            return Err(Error::validation("PI count must be >= 1"));
        }
        let total = ((pi_count as f64 / pi_fraction).round() as u32).max(pi_count as u32);
        Ok(self
            .space
            .configs()
            .zip(&self.runtimes_s)
            .map(|(cfg, rt)| TraceRow {
                workload: workload.to_string(),
                class: class.to_string(),
                vm_name: self.space.vms()[cfg.vm_index].name.clone(),
                n: cfg.n,
                pi_times_s: rt.map_or_else(Vec::new, |t| vec![pi_fraction * t / pi_count as f64; pi_count]),
                total_iterations: rt.map(|_| total),
                total_runtime_s: *rt,
                feasible: rt.is_some(),
            })
            .collect())
    }
}

/// Evaluates the model over the whole grid. Noise draws come from a ChaCha8
/// stream seeded with `model.seed`, one per grid point in grid order.
pub fn synth_space(model: &AmdahlModel, space: &ConfigurationSpace) -> Result<SynthSpace> {
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    let runtimes_s = space
        .configs()
        .map(|cfg| synth_runtime(model, &space.vms()[cfg.vm_index], cfg.n, &mut rng))
        .collect();
    Ok(SynthSpace {
        space: space.clone(),
        runtimes_s,
    })
}

/// Observation backend over a generated space.
///
/// PI-mode observations report the exact runtime but charge only
/// `pi_fraction` of the full-run cost.
#[derive(Debug, Clone)]
pub struct SynthBackend {
    synth: SynthSpace,
    pi_fraction: f64,
    failure_detect_s: f64,
}

impl SynthBackend {
    pub fn new(model: &AmdahlModel, space: &ConfigurationSpace) -> Result<Self> {
        Ok(Self::from_space(synth_space(model, space)?))
    }

    pub fn from_space(synth: SynthSpace) -> Self {
        Self {
            synth,
            pi_fraction: crate::cost::PiFractionTable::default().mean(),
            failure_detect_s: DEFAULT_FAILURE_DETECT_S,
        }
    }

    pub fn with_pi_fraction(mut self, fraction: f64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::validation(format!(
                "PI fraction must lie in (0,1], got {fraction}"
            )));
        }
        self.pi_fraction = fraction;
        Ok(self)
    }

    pub fn with_failure_detect_s(mut self, seconds: f64) -> Result<Self> {
        if !(seconds.is_finite() && seconds >= 0.0) {
            return Err(Error::validation(format!(
                "failure detection time must be >= 0, got {seconds}"
            )));
        }
        self.failure_detect_s = seconds;
        Ok(self)
    }

    pub fn synth(&self) -> &SynthSpace {
        &self.synth
    }

    pub fn pi_fraction(&self) -> f64 {
        self.pi_fraction
    }
}

impl ObservationBackend for SynthBackend {
    fn space(&self) -> &ConfigurationSpace {
        &self.synth.space
    }

    fn observe(&self, config: CloudConfiguration, mode: ObservationMode) -> Result<Observation> {
        let vm = self.synth.space.vm(config)?;
        match self.synth.runtime(config)? {
            None => Ok(Observation::infeasible(
                config,
                mode,
                failure_charge(vm, config.n, self.failure_detect_s)?,
            )),
            Some(t) => {
                let objective = config_cost(t, vm.price_usd_hour, config.n)?;
                let charged = match mode {
                    ObservationMode::Full => objective,
                    ObservationMode::Pi => objective * self.pi_fraction,
                };
                Ok(Observation {
                    config,
                    runtime_estimate_s: t,
                    charged_cost_usd: charged,
                    objective_cost_usd: objective,
                    feasible: true,
                    mode,
                })
            }
        }
    }
}

/// Convenience for callers that only need the default PI-trace layout.
pub fn default_trace(synth: &SynthSpace, workload: &str, class: &str, pi_fraction: f64) -> Result<Vec<TraceRow>> {
    synth.to_trace(workload, class, pi_fraction, DEFAULT_PI_COUNT)
}
