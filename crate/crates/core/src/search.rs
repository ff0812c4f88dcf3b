//! Search strategies over a configuration space and search-cost accounting.
//!
//! Every observation costs money, including those that hit an infeasible
//! configuration. Infeasible observations count against the budget and the
//! accumulated charge but never enter the surrogate's training data or the
//! solution.

use std::collections::HashSet;
use std::fmt;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{select_next, AcquisitionSpec};
use crate::catalog::{normalize_coordinates, CloudConfiguration, ConfigurationSpace, VmType};
use crate::cost::{config_cost, Observation, ObservationMode};
use crate::error::{Error, Result};
use crate::surrogate::{FittedSurrogate, SurrogateKind};
use crate::trace::ObservationBackend;

/// Billed seconds for an observation that fails on an infeasible configuration.
pub const DEFAULT_FAILURE_DETECT_S: f64 = 120.0;
pub const SCHEMA_VERSION: u32 = 1;

/// What a failed observation costs: `failure_detect_s` of billed time.
pub fn failure_charge(vm: &VmType, n: u32, failure_detect_s: f64) -> Result<f64> {
    config_cost(failure_detect_s, vm.price_usd_hour, n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SearchPolicy {
    Random,
    Grid,
    Smbo {
        surrogate: SurrogateKind,
        acquisition: AcquisitionSpec,
    },
}

impl SearchPolicy {
    pub fn smbo(surrogate: SurrogateKind, acquisition: AcquisitionSpec) -> Self {
        SearchPolicy::Smbo { surrogate, acquisition }
    }

    /// `random`, `grid`, or `<surrogate>-<acquisition>` such as `gp-ei`.
    pub fn label(&self) -> String {
        match self {
            SearchPolicy::Random => "random".into(),
            SearchPolicy::Grid => "grid".into(),
            SearchPolicy::Smbo { surrogate, acquisition } => format!("{surrogate}-{}", acquisition.kind),
        }
    }
}

impl fmt::Display for SearchPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub max_observations: usize,
    pub init_random: usize,
    #[serde(default)]
    pub mode: ObservationMode,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            max_observations: 32,
            init_random: 8,
            mode: ObservationMode::Full,
        }
    }
}

impl Budget {
    pub fn validate(&self) -> Result<()> {
        if self.init_random == 0 || self.init_random > self.max_observations {
            return Err(Error::validation(format!(
                "budget requires 0 < init_random ({}) <= max_observations ({})",
                self.init_random, self.max_observations
            )));
        }
        Ok(())
    }
}

/// How a configuration was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "by", rename_all = "lowercase")]
pub enum Selection {
    Random,
    Grid,
    /// Picked by the acquisition function from a surrogate trained on
    /// `training_points` feasible observations.
    Model {
        training_points: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SearchState {
    pub history: Vec<Observation>,
    pub best_so_far: Option<Observation>,
    pub accumulated_charge_usd: f64,
}

impl SearchState {
    pub fn record(&mut self, obs: Observation) {
        self.accumulated_charge_usd += obs.charged_cost_usd;
        let improves = obs.feasible
            && self
                .best_so_far
                .as_ref()
                .is_none_or(|b| obs.objective_cost_usd < b.objective_cost_usd);
        if improves {
            self.best_so_far = Some(obs.clone());
        }
        self.history.push(obs);
    }

    pub fn observed(&self) -> HashSet<CloudConfiguration> {
        self.history.iter().map(|o| o.config).collect()
    }

    pub fn infeasible(&self) -> HashSet<CloudConfiguration> {
        self.history.iter().filter(|o| !o.feasible).map(|o| o.config).collect()
    }

    /// Normalized inputs and log objective costs of the feasible history.
    pub fn training_set(&self, space: &ConfigurationSpace) -> Result<(Vec<[f64; 2]>, Vec<f64>)> {
        let mut points = Vec::new();
        let mut targets = Vec::new();
        for obs in self.history.iter().filter(|o| o.feasible) {
            points.push(normalize_coordinates(space, obs.config)?);
            targets.push(obs.objective_cost_usd.ln());
        }
        Ok((points, targets))
    }
}

/// Σ charged cost over the history.
pub fn accumulated_search_cost(state: &SearchState) -> f64 {
    state.history.iter().map(|o| o.charged_cost_usd).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub policy: SearchPolicy,
    pub budget: Budget,
    pub seed: u64,
    pub state: SearchState,
    pub selections: Vec<Selection>,
    /// Best feasible objective cost after each observation (`None` until
    /// the first feasible one).
    pub best_cost_curve: Vec<Option<f64>>,
    pub accumulated_charge_curve: Vec<f64>,
    pub recommended: CloudConfiguration,
}

impl SearchResult {
    pub fn configs(&self) -> Vec<CloudConfiguration> {
        self.state.history.iter().map(|o| o.config).collect()
    }

    pub fn best(&self) -> &Observation {
        self.state
            .best_so_far
            .as_ref()
            .expect("a result always holds a feasible best")
    }
}

fn draw_unobserved<R: Rng + ?Sized>(
    space: &ConfigurationSpace,
    observed: &HashSet<CloudConfiguration>,
    rng: &mut R,
) -> Option<CloudConfiguration> {
    let remaining: Vec<CloudConfiguration> = space.configs().filter(|c| !observed.contains(c)).collect();
    if remaining.is_empty() {
        None
    } else {
        Some(remaining[rng.random_range(0..remaining.len())])
    }
}

/// Runs one search. Identical inputs and seed give identical results.
pub fn run_search<B: ObservationBackend + ?Sized>(
    policy: &SearchPolicy,
    backend: &B,
    budget: &Budget,
    seed: u64,
) -> Result<SearchResult> {
    run_search_with_model(policy, backend, budget, seed).map(|(result, _)| result)
}

/// Like [`run_search`], also returning the last surrogate fitted (SMBO only).
pub fn run_search_with_model<B: ObservationBackend + ?Sized>(
    policy: &SearchPolicy,
    backend: &B,
    budget: &Budget,
    seed: u64,
) -> Result<(SearchResult, Option<FittedSurrogate>)> {
    budget.validate()?;
    if let SearchPolicy::Smbo { acquisition, .. } = policy {
        acquisition.validate()?;
    }
    let space = backend.space();
    if space.is_empty() {
        return Err(Error::validation("search space is empty"));
    }
    let steps = budget.max_observations.min(space.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = SearchState::default();
    let mut selections = Vec::with_capacity(steps);
    let mut best_cost_curve = Vec::with_capacity(steps);
    let mut accumulated_charge_curve = Vec::with_capacity(steps);
    let mut last_model: Option<FittedSurrogate> = None;

    for step in 0..steps {
        let observed = state.observed();
        let (config, selection) = match policy {
            SearchPolicy::Grid => (space.config_at(step), Selection::Grid),
            SearchPolicy::Random => (
                draw_unobserved(space, &observed, &mut rng).ok_or(Error::Exhausted)?,
                Selection::Random,
            ),
            SearchPolicy::Smbo { surrogate, acquisition } => {
                let (points, targets) = state.training_set(space)?;
                if step < budget.init_random || points.is_empty() {
                    (
                        draw_unobserved(space, &observed, &mut rng).ok_or(Error::Exhausted)?,
                        Selection::Random,
                    )
                } else {
                    let model = surrogate.fit(&points, &targets, rng.next_u64())?;
                    let best = targets.iter().copied().fold(f64::INFINITY, f64::min);
                    let next = select_next(
                        &model,
                        space,
                        acquisition,
                        &observed,
                        &state.infeasible(),
                        best,
                        &mut rng,
                    )?;
                    last_model = Some(model);
                    (
                        next,
                        Selection::Model {
                            training_points: points.len(),
                        },
                    )
                }
            }
        };
        let obs = backend.observe(config, budget.mode)?;
        state.record(obs);
        selections.push(selection);
        best_cost_curve.push(state.best_so_far.as_ref().map(|b| b.objective_cost_usd));
        accumulated_charge_curve.push(state.accumulated_charge_usd);
    }
    let Some(best) = state.best_so_far.as_ref() else {
        return Err(Error::NoSolution {
            accumulated_charge_usd: state.accumulated_charge_usd,
        });
    };
    let recommended = best.config;
    let result = SearchResult {
        policy: *policy,
        budget: *budget,
        seed,
        state,
        selections,
        best_cost_curve,
        accumulated_charge_curve,
        recommended,
    };
    Ok((result, last_model))
}

/// Accumulated charge of observing `configs` in order under `mode`.
///
/// Full-mode charges fall back to the extrapolated full-run cost when the
/// backend only holds early-stop data for a configuration.
pub fn charge_curve<B: ObservationBackend + ?Sized>(
    backend: &B,
    configs: &[CloudConfiguration],
    mode: ObservationMode,
) -> Result<Vec<f64>> {
    let mut total = 0.0;
    configs
        .iter()
        .map(|&c| {
            let charge = match backend.observe(c, mode) {
                Ok(obs) => obs.charged_cost_usd,
                Err(Error::ModeUnavailable { .. }) if mode == ObservationMode::Full => {
                    backend.observe(c, ObservationMode::Pi)?.objective_cost_usd
                }
                Err(e) => return Err(e),
            };
            total += charge;
            Ok(total)
        })
        .collect()
}

/// Minimum objective cost over every feasible configuration (exhaustive scan).
pub fn space_optimum<B: ObservationBackend + ?Sized>(
    backend: &B,
    mode: ObservationMode,
) -> Result<Option<Observation>> {
    let mut best: Option<Observation> = None;
    for cfg in backend.space().configs() {
        let obs = backend.observe(cfg, mode)?;
        if obs.feasible
            && best
                .as_ref()
                .is_none_or(|b| obs.objective_cost_usd < b.objective_cost_usd)
        {
            best = Some(obs);
        }
    }
    Ok(best)
}

/// Serializable form of a [`SearchResult`] with VM names resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub schema_version: u32,
    pub policy: SearchPolicy,
    pub policy_label: String,
    pub seed: u64,
    pub budget: Budget,
    pub history: Vec<HistoryEntry>,
    pub best_cost_curve: Vec<Option<f64>>,
    pub accumulated_charge_curve: Vec<f64>,
    pub accumulated_charge_usd: f64,
    pub recommendation: HistoryEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub step: usize,
    pub vm: String,
    pub vm_index: usize,
    pub n: u32,
    pub selection: Selection,
    pub feasible: bool,
    pub mode: ObservationMode,
    pub runtime_estimate_s: f64,
    pub charged_cost_usd: f64,
    pub objective_cost_usd: f64,
}

impl HistoryEntry {
    pub fn observation(&self) -> Observation {
        Observation {
            config: CloudConfiguration::new(self.vm_index, self.n),
            runtime_estimate_s: self.runtime_estimate_s,
            charged_cost_usd: self.charged_cost_usd,
            objective_cost_usd: self.objective_cost_usd,
            feasible: self.feasible,
            mode: self.mode,
        }
    }
}

impl SearchResult {
    pub fn to_report(&self, space: &ConfigurationSpace) -> Result<SearchReport> {
        let entry = |step: usize, obs: &Observation, selection: Selection| -> Result<HistoryEntry> {
            Ok(HistoryEntry {
                step,
                vm: space.vm(obs.config)?.name.clone(),
                vm_index: obs.config.vm_index,
                n: obs.config.n,
                selection,
                feasible: obs.feasible,
                mode: obs.mode,
                runtime_estimate_s: obs.runtime_estimate_s,
                charged_cost_usd: obs.charged_cost_usd,
                objective_cost_usd: obs.objective_cost_usd,
            })
        };
        let history = self
            .state
            .history
            .iter()
            .zip(&self.selections)
            .enumerate()
            .map(|(k, (obs, sel))| entry(k + 1, obs, *sel))
            .collect::<Result<Vec<_>>>()?;
        let best_step = self
            .state
            .history
            .iter()
            .position(|o| o.config == self.recommended)
            .expect("recommendation comes from the history");
        Ok(SearchReport {
            schema_version: SCHEMA_VERSION,
            policy: self.policy,
            policy_label: self.policy.label(),
            seed: self.seed,
            budget: self.budget,
            recommendation: history[best_step].clone(),
            history,
            best_cost_curve: self.best_cost_curve.clone(),
            accumulated_charge_curve: self.accumulated_charge_curve.clone(),
            accumulated_charge_usd: self.state.accumulated_charge_usd,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::AcquisitionKind;
    use crate::catalog::builtin_catalog;

    #[test]
    fn failure_charge_examples() {
        let vm = builtin_catalog().into_iter().find(|v| v.name == "m5n.large").unwrap();
        assert_eq!(failure_charge(&vm, 2, 0.0).unwrap(), 0.0);
        let c = failure_charge(&vm, 2, 120.0).unwrap();
        assert!((c - 0.119 * 2.0 * 120.0 / 3600.0).abs() < 1e-15);
        assert!((c - 0.00793).abs() < 1e-5);
        assert!((failure_charge(&vm, 4, 120.0).unwrap() - 2.0 * c).abs() < 1e-15);
    }

    fn obs(cost: f64, charge: f64, feasible: bool) -> Observation {
        Observation {
            config: CloudConfiguration::new(0, 1),
            runtime_estimate_s: if feasible { 1.0 } else { 0.0 },
            charged_cost_usd: charge,
            objective_cost_usd: if feasible { cost } else { 0.0 },
            feasible,
            mode: ObservationMode::Full,
        }
    }

    #[test]
    fn state_accounting() {
        let mut state = SearchState::default();
        assert_eq!(accumulated_search_cost(&state), 0.0);
        state.record(obs(0.1, 0.1, true));
        state.record(obs(0.0, 0.2, false));
        assert!((accumulated_search_cost(&state) - 0.3).abs() < 1e-15);
        assert_eq!(accumulated_search_cost(&state), state.accumulated_charge_usd);
        assert_eq!(state.best_so_far.as_ref().unwrap().objective_cost_usd, 0.1);
        state.record(obs(0.05, 0.05, true));
        assert_eq!(state.best_so_far.as_ref().unwrap().objective_cost_usd, 0.05);
    }

    #[test]
    fn budget_validation() {
        assert!(Budget::default().validate().is_ok());
        let bad = Budget {
            init_random: 0,
            ..Budget::default()
        };
        assert!(bad.validate().is_err());
        let bad = Budget {
            init_random: 40,
            ..Budget::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn labels() {
        assert_eq!(SearchPolicy::Random.label(), "random");
        let p = SearchPolicy::smbo(SurrogateKind::Rf, AcquisitionSpec::new(AcquisitionKind::Lcb));
        assert_eq!(p.label(), "rf-lcb");
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<SearchPolicy>(&json).unwrap(), p);
    }
}
