//! Repeated seeded searches per strategy with geometric-mean aggregation.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{builtin_catalog, load_catalog, CloudConfiguration, ConfigurationSpace, DEFAULT_SIZES};
use crate::cost::{Observation, ObservationMode};
use crate::error::{Error, Result};
use crate::pareto::{
    front_metrics, observed_points, pareto_front, recommend, FrontMetrics, FrontPoint, ObjectiveBounds,
};
use crate::search::{charge_curve, run_search, Budget, SearchPolicy, DEFAULT_FAILURE_DETECT_S, SCHEMA_VERSION};
use crate::synthcloud::{AmdahlModel, SynthBackend};
use crate::trace::{load_trace, ObservationBackend, TraceBackend};

pub const DEFAULT_REPETITIONS: usize = 50;

/// `exp(mean(ln v))`; every value must be positive.
pub fn geometric_mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::validation("geometric mean of no values"));
    }
    if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::validation(format!(
            "geometric mean needs positive values, got {v}"
        )));
    }
    let log_sum: f64 = values.iter().map(|v| v.ln()).sum();
    Ok((log_sum / values.len() as f64).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    /// Defaults to the policy label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub policy: SearchPolicy,
}

impl From<SearchPolicy> for StrategySpec {
    fn from(policy: SearchPolicy) -> Self {
        Self { name: None, policy }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum BackendSpec {
    Synth {
        #[serde(default)]
        model: AmdahlModel,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        catalog: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sizes: Option<Vec<u32>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pi_fraction: Option<f64>,
    },
    Trace {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        workload: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        catalog: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sizes: Option<Vec<u32>>,
    },
}

pub type DynBackend = Box<dyn ObservationBackend + Send + Sync>;

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn space_for(base: &Path, catalog: &Option<PathBuf>, sizes: &Option<Vec<u32>>) -> Result<ConfigurationSpace> {
    let vms = match catalog {
        Some(p) => load_catalog(BufReader::new(File::open(resolve(base, p))?))?,
        None => builtin_catalog(),
    };
    let sizes = sizes.clone().unwrap_or_else(|| DEFAULT_SIZES.to_vec());
    ConfigurationSpace::from_catalog(&vms, &sizes)
}

impl BackendSpec {
    /// Builds the backend; relative paths are resolved against `base`.
    pub fn build(&self, base: &Path, failure_detect_s: f64) -> Result<DynBackend> {
        match self {
            BackendSpec::Synth {
                model,
                catalog,
                sizes,
                pi_fraction,
            } => {
                let space = space_for(base, catalog, sizes)?;
                let mut backend = SynthBackend::new(model, &space)?.with_failure_detect_s(failure_detect_s)?;
                if let Some(f) = pi_fraction {
                    backend = backend.with_pi_fraction(*f)?;
                }
                Ok(Box::new(backend))
            }
            BackendSpec::Trace {
                path,
                workload,
                catalog,
                sizes,
            } => {
                let space = space_for(base, catalog, sizes)?;
                let trace = load_trace(BufReader::new(File::open(resolve(base, path))?))?;
                let backend =
                    TraceBackend::new(&trace, space, workload.as_deref())?.with_failure_detect_s(failure_detect_s)?;
                Ok(Box::new(backend))
            }
        }
    }
}

fn default_repetitions() -> usize {
    DEFAULT_REPETITIONS
}

fn default_failure_detect_s() -> f64 {
    DEFAULT_FAILURE_DETECT_S
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub strategies: Vec<StrategySpec>,
    pub backend: BackendSpec,
    #[serde(default)]
    pub budget: Budget,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_failure_detect_s")]
    pub failure_detect_s: f64,
}

impl ExperimentSpec {
    pub fn new(strategies: Vec<SearchPolicy>, backend: BackendSpec) -> Self {
        Self {
            strategies: strategies.into_iter().map(StrategySpec::from).collect(),
            backend,
            budget: Budget::default(),
            repetitions: DEFAULT_REPETITIONS,
            base_seed: 0,
            failure_detect_s: DEFAULT_FAILURE_DETECT_S,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let spec: Self = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() {
            return Err(Error::validation("experiment needs at least one strategy"));
        }
        if self.repetitions == 0 {
            return Err(Error::validation("repetitions must be >= 1"));
        }
        // A zero failure charge would put zeros into the geometric means.
        if !(self.failure_detect_s.is_finite() && self.failure_detect_s > 0.0) {
            return Err(Error::validation(format!(
                "failure_detect_s must be > 0, got {}",
                self.failure_detect_s
            )));
        }
        self.budget.validate()
    }

    /// Strategy names with duplicates disambiguated by a `#k` suffix.
    pub fn strategy_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for s in &self.strategies {
            let base = s.name.clone().unwrap_or_else(|| s.policy.label());
            let mut name = base.clone();
            let mut k = 2;
            while names.contains(&name) {
                name = format!("{base}#{k}");
                k += 1;
            }
            names.push(name);
        }
        names
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub min: f64,
    pub median: f64,
    pub max: f64,
    pub geomean: f64,
}

impl Distribution {
    fn of(values: &[f64]) -> Result<Self> {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let m = sorted.len();
        let median = if m % 2 == 1 {
            sorted[m / 2]
        } else {
            0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
        };
        Ok(Self {
            min: sorted[0],
            median,
            max: sorted[m - 1],
            geomean: geometric_mean(values)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub name: String,
    pub policy: SearchPolicy,
    /// Per step; `None` while some repetition has no feasible observation yet.
    pub geomean_best: Vec<Option<f64>>,
    pub geomean_charge_full: Vec<f64>,
    pub geomean_charge_pi: Vec<f64>,
    /// Final best cost of each repetition, in repetition order.
    pub final_best: Vec<f64>,
    pub final_best_summary: Distribution,
    /// Random's geomean final best over this strategy's (higher is better).
    pub ratio_to_random: Option<f64>,
    pub gap_to_optimum: Option<f64>,
    pub pareto: FrontMetrics,
    /// Every distinct feasible configuration any repetition observed.
    pub observed: Vec<FrontPoint>,
    pub recommendations: Vec<FrontPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceOptimum {
    pub config: CloudConfiguration,
    pub label: String,
    pub cost_usd: f64,
    pub runtime_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub repetitions: usize,
    pub base_seed: u64,
    pub budget: Budget,
    pub space_size: usize,
    /// VM names in axis order, for resolving `vm_index`.
    pub vm_axis: Vec<String>,
    pub optimum: Option<SpaceOptimum>,
    pub strategies: Vec<StrategyReport>,
}

impl ExperimentReport {
    pub fn strategy(&self, name: &str) -> Option<&StrategyReport> {
        self.strategies.iter().find(|s| s.name == name)
    }

    pub fn final_geomean(&self, name: &str) -> Option<f64> {
        self.strategy(name).map(|s| s.final_best_summary.geomean)
    }
}

/// Observes `config`, falling back to PI estimates where a trace lacks
/// full-run data.
fn observe_for_scan<B: ObservationBackend + ?Sized>(
    backend: &B,
    config: CloudConfiguration,
    mode: ObservationMode,
) -> Result<Observation> {
    match backend.observe(config, mode) {
        Err(Error::ModeUnavailable { .. }) if mode == ObservationMode::Full => {
            backend.observe(config, ObservationMode::Pi)
        }
        other => other,
    }
}

/// Every feasible point of the space, in grid order.
pub fn scan_space<B: ObservationBackend + ?Sized>(backend: &B, mode: ObservationMode) -> Result<Vec<Observation>> {
    let mut out = Vec::new();
    for cfg in backend.space().configs() {
        let obs = observe_for_scan(backend, cfg, mode)?;
        if obs.feasible {
            out.push(obs);
        }
    }
    Ok(out)
}

struct RepOutcome {
    best: Vec<Option<f64>>,
    charge_full: Vec<f64>,
    charge_pi: Vec<f64>,
    final_best: f64,
    history: Vec<Observation>,
}

fn run_rep<B: ObservationBackend + ?Sized>(
    policy: &SearchPolicy,
    backend: &B,
    budget: &Budget,
    seed: u64,
) -> Result<RepOutcome> {
    let result = run_search(policy, backend, budget, seed)?;
    let configs = result.configs();
    Ok(RepOutcome {
        charge_full: charge_curve(backend, &configs, ObservationMode::Full)?,
        charge_pi: charge_curve(backend, &configs, ObservationMode::Pi)?,
        final_best: result.best().objective_cost_usd,
        best: result.best_cost_curve,
        history: result.state.history,
    })
}

fn geomean_columns(rows: &[&[f64]]) -> Result<Vec<f64>> {
    let len = rows.iter().map(|r| r.len()).min().unwrap_or(0);
    (0..len)
        .map(|k| geometric_mean(&rows.iter().map(|r| r[k]).collect::<Vec<_>>()))
        .collect()
}

fn geomean_optional_columns(rows: &[&[Option<f64>]]) -> Result<Vec<Option<f64>>> {
    let len = rows.iter().map(|r| r.len()).min().unwrap_or(0);
    (0..len)
        .map(|k| {
            let column: Option<Vec<f64>> = rows.iter().map(|r| r[k]).collect();
            column.map(|c| geometric_mean(&c)).transpose()
        })
        .collect()
}

/// Runs the experiment on an already-built backend. Repetitions run in
/// parallel; aggregation follows repetition order.
pub fn run_experiment_on<B: ObservationBackend + ?Sized>(
    spec: &ExperimentSpec,
    backend: &B,
) -> Result<ExperimentReport> {
    spec.validate()?;
    let space = backend.space();
    let scan = scan_space(backend, spec.budget.mode)?;
    let optimum = scan
        .iter()
        .min_by(|a, b| a.objective_cost_usd.total_cmp(&b.objective_cost_usd))
        .map(|o| SpaceOptimum {
            config: o.config,
            label: space.label(o.config),
            cost_usd: o.objective_cost_usd,
            runtime_s: o.runtime_estimate_s,
        });
    let bounds = ObjectiveBounds::of(
        &scan
            .iter()
            .map(|o| (o.runtime_estimate_s, o.objective_cost_usd))
            .collect::<Vec<_>>(),
    );

    let names = spec.strategy_names();
    let mut strategies = Vec::with_capacity(names.len());
    for (strategy, name) in spec.strategies.iter().zip(names) {
        let outcomes = (0..spec.repetitions)
            .into_par_iter()
            .map(|rep| {
                run_rep(
                    &strategy.policy,
                    backend,
                    &spec.budget,
                    spec.base_seed.wrapping_add(rep as u64),
                )
            })
            .collect::<Result<Vec<RepOutcome>>>()?;

        let best_rows: Vec<&[Option<f64>]> = outcomes.iter().map(|o| o.best.as_slice()).collect();
        let full_rows: Vec<&[f64]> = outcomes.iter().map(|o| o.charge_full.as_slice()).collect();
        let pi_rows: Vec<&[f64]> = outcomes.iter().map(|o| o.charge_pi.as_slice()).collect();
        let geomean_best = geomean_optional_columns(&best_rows)?;
        let geomean_charge_full = geomean_columns(&full_rows)?;
        let geomean_charge_pi = geomean_columns(&pi_rows)?;
        let final_best: Vec<f64> = outcomes.iter().map(|o| o.final_best).collect();
        let final_best_summary = Distribution::of(&final_best)?;

        let histories: Vec<Vec<Observation>> = outcomes.into_iter().map(|o| o.history).collect();
        let observed = observed_points(&histories);
        let recommendations = recommend(&histories)?;
        let pareto = match &bounds {
            Some(b) => front_metrics(&pareto_front(&recommendations)?, b),
            None => FrontMetrics { count: 0, area: 0.0 },
        };

        strategies.push(StrategyReport {
            name,
            policy: strategy.policy,
            geomean_best,
            geomean_charge_full,
            geomean_charge_pi,
            gap_to_optimum: optimum
                .as_ref()
                .map(|o| (final_best_summary.geomean - o.cost_usd) / o.cost_usd),
            final_best,
            final_best_summary,
            ratio_to_random: None,
            pareto,
            observed,
            recommendations,
        });
    }

    let random = strategies
        .iter()
        .find(|s| s.policy == SearchPolicy::Random)
        .map(|s| s.final_best_summary.geomean);
    if let Some(r) = random {
        for s in &mut strategies {
            s.ratio_to_random = Some(r / s.final_best_summary.geomean);
        }
    }

    Ok(ExperimentReport {
        schema_version: SCHEMA_VERSION,
        repetitions: spec.repetitions,
        base_seed: spec.base_seed,
        budget: spec.budget,
        space_size: space.len(),
        vm_axis: space.vms().iter().map(|v| v.name.clone()).collect(),
        optimum,
        strategies,
    })
}

/// Builds the backend from `spec` (paths relative to `base`) and runs it.
pub fn run_experiment(spec: &ExperimentSpec, base: &Path) -> Result<ExperimentReport> {
    spec.validate()?;
    let backend = spec.backend.build(base, spec.failure_detect_s)?;
    run_experiment_on(spec, backend.as_ref())
}

/// Per-step improvement factor over the random baseline: random's geomean
/// best divided by the strategy's. Random maps to 1 everywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedCurve {
    pub name: String,
    pub values: Vec<Option<f64>>,
}

pub fn normalize_to_random(report: &ExperimentReport) -> Result<Vec<NormalizedCurve>> {
    let random = report
        .strategies
        .iter()
        .find(|s| s.policy == SearchPolicy::Random)
        .ok_or_else(|| Error::validation("report has no random baseline"))?;
    Ok(report
        .strategies
        .iter()
        .map(|s| NormalizedCurve {
            name: s.name.clone(),
            values: s
                .geomean_best
                .iter()
                .zip(&random.geomean_best)
                .map(|(v, r)| match (v, r) {
                    (Some(v), Some(r)) => Some(r / v),
                    _ => None,
                })
                .collect(),
        })
        .collect())
}

/// `(geomean final best − optimum) / optimum` per strategy.
pub fn gap_to_optimum(report: &ExperimentReport, optimum_cost: f64) -> Result<Vec<(String, f64)>> {
    if !(optimum_cost.is_finite() && optimum_cost > 0.0) {
        return Err(Error::validation(format!(
            "optimum must be positive, got {optimum_cost}"
        )));
    }
    Ok(report
        .strategies
        .iter()
        .map(|s| {
            (
                s.name.clone(),
                (s.final_best_summary.geomean - optimum_cost) / optimum_cost,
            )
        })
        .collect())
}

/// Flattens the curves to `step,strategy,geomean_best,geomean_charge_full,geomean_charge_pi`.
/// Steps are 1-based; an undefined best is an empty field.
pub fn export_csv<W: Write>(report: &ExperimentReport, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record([
        "step",
        "strategy",
        "geomean_best",
        "geomean_charge_full",
        "geomean_charge_pi",
    ])
    .map_err(io)?;
    for s in &report.strategies {
        for k in 0..s.geomean_charge_full.len() {
            let best = s
                .geomean_best
                .get(k)
                .copied()
                .flatten()
                .map(|v| v.to_string())
                .unwrap_or_default();
            w.write_record([
                (k + 1).to_string(),
                s.name.clone(),
                best,
                s.geomean_charge_full[k].to_string(),
                s.geomean_charge_pi[k].to_string(),
            ])
            .map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::{AcquisitionKind, AcquisitionSpec};
    use crate::surrogate::SurrogateKind;

    #[test]
    fn geometric_mean_examples() {
        assert_eq!(geometric_mean(&[1.0, 1.0, 1.0]).unwrap(), 1.0);
        assert!((geometric_mean(&[2.0, 8.0]).unwrap() - 4.0).abs() < 1e-12);
        assert!((geometric_mean(&[5.0]).unwrap() - 5.0).abs() < 1e-12);
        assert!(geometric_mean(&[1.0, 0.0]).is_err());
        assert!(geometric_mean(&[-1.0]).is_err());
        assert!(geometric_mean(&[]).is_err());
    }

    fn small_spec(strategies: Vec<SearchPolicy>, reps: usize) -> ExperimentSpec {
        let mut spec = ExperimentSpec::new(
            strategies,
            BackendSpec::Synth {
                model: AmdahlModel {
                    noise_sigma: 0.0,
                    mem_req_gib: 4.0,
                    ..AmdahlModel::default()
                },
                catalog: None,
                sizes: Some(vec![1, 2, 4]),
                pi_fraction: None,
            },
        );
        spec.repetitions = reps;
        spec.budget = Budget {
            max_observations: 10,
            init_random: 4,
            mode: ObservationMode::Full,
        };
        spec
    }

    #[test]
    fn single_rep_curves_match_the_run() {
        let spec = small_spec(vec![SearchPolicy::Random], 1);
        let backend = spec.backend.build(Path::new("."), spec.failure_detect_s).unwrap();
        let report = run_experiment_on(&spec, backend.as_ref()).unwrap();
        let run = run_search(&SearchPolicy::Random, backend.as_ref(), &spec.budget, 0).unwrap();
        let s = &report.strategies[0];
        assert_eq!(s.geomean_best.len(), 10);
        for (a, b) in s.geomean_best.iter().zip(&run.best_cost_curve) {
            match (a, b) {
                (Some(a), Some(b)) => assert!((a - b).abs() <= 1e-12 * b),
                (None, None) => {}
                _ => panic!("definedness differs"),
            }
        }
        for (a, b) in s.geomean_charge_full.iter().zip(&run.accumulated_charge_curve) {
            assert!((a - b).abs() <= 1e-12 * b);
        }
        assert_eq!(s.ratio_to_random, Some(1.0));
    }

    #[test]
    fn identical_strategies_give_identical_sections() {
        let ei = SearchPolicy::smbo(SurrogateKind::Rf, AcquisitionSpec::new(AcquisitionKind::Ei));
        let spec = small_spec(vec![ei, ei], 3);
        let report = run_experiment(&spec, Path::new(".")).unwrap();
        let (a, b) = (&report.strategies[0], &report.strategies[1]);
        assert_eq!(a.name, "rf-ei");
        assert_eq!(b.name, "rf-ei#2");
        assert_eq!(a.geomean_best, b.geomean_best);
        assert_eq!(a.geomean_charge_full, b.geomean_charge_full);
        assert_eq!(a.final_best, b.final_best);
    }

    #[test]
    fn grid_finds_the_scan_optimum_when_budget_covers_space() {
        let mut spec = small_spec(vec![SearchPolicy::Grid], 1);
        spec.budget.max_observations = 96;
        let report = run_experiment(&spec, Path::new(".")).unwrap();
        let opt = report.optimum.clone().unwrap();
        assert_eq!(report.strategies[0].final_best[0], opt.cost_usd);
        assert_eq!(report.strategies[0].gap_to_optimum, Some(0.0));
    }

    #[test]
    fn normalization_needs_random() {
        let spec = small_spec(vec![SearchPolicy::Grid], 1);
        let report = run_experiment(&spec, Path::new(".")).unwrap();
        assert!(normalize_to_random(&report).is_err());

        let spec = small_spec(vec![SearchPolicy::Random, SearchPolicy::Random], 2);
        let report = run_experiment(&spec, Path::new(".")).unwrap();
        for curve in normalize_to_random(&report).unwrap() {
            assert!(curve.values.iter().flatten().all(|v| *v == 1.0));
        }
    }

    #[test]
    fn gap_examples() {
        let spec = small_spec(vec![SearchPolicy::Random], 1);
        let mut report = run_experiment(&spec, Path::new(".")).unwrap();
        report.strategies[0].final_best_summary.geomean = 1.13;
        let gaps = gap_to_optimum(&report, 1.0).unwrap();
        assert!((gaps[0].1 - 0.13).abs() < 1e-12);
        assert!(gap_to_optimum(&report, 0.0).is_err());
    }

    #[test]
    fn spec_validation() {
        let mut spec = small_spec(vec![], 1);
        assert!(spec.validate().is_err());
        spec.strategies.push(SearchPolicy::Random.into());
        spec.repetitions = 0;
        assert!(spec.validate().is_err());
        spec.repetitions = 1;
        assert!(spec.validate().is_ok());
    }

    #[test]
    fn spec_json_defaults() {
        let json = r#"{"strategies":[{"policy":{"kind":"random"}}],"backend":{"type":"synth"}}"#;
        let spec: ExperimentSpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec.repetitions, 50);
        assert_eq!(spec.budget, Budget::default());
        assert_eq!(spec.failure_detect_s, DEFAULT_FAILURE_DETECT_S);
    }

    #[test]
    fn csv_export_shape() {
        let spec = small_spec(vec![SearchPolicy::Random], 2);
        let report = run_experiment(&spec, Path::new(".")).unwrap();
        let mut buf = Vec::new();
        export_csv(&report, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "step,strategy,geomean_best,geomean_charge_full,geomean_charge_pi"
        );
        assert_eq!(lines.len(), 11);
        assert!(lines[1].starts_with("1,random,"));
    }
}
