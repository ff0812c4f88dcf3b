//! Cost-aware search for the cheapest cloud configuration of an HPC
//! workload: VM catalog and configuration grid, cost and early-stop
//! accounting, synthetic and trace-replay backends, GP / random-forest
//! surrogates, acquisition functions, search strategies, Pareto
//! recommendations and a repeated-run benchmark harness.

pub mod acquisition;
pub mod bench;
pub mod catalog;
pub mod cost;
pub mod error;
pub mod pareto;
pub mod search;
pub mod surrogate;
pub mod synthcloud;
pub mod trace;

pub use acquisition::{select_next, AcquisitionKind, AcquisitionSpec};
pub use bench::{run_experiment, ExperimentReport, ExperimentSpec};
pub use catalog::{builtin_catalog, load_catalog, CloudConfiguration, ConfigurationSpace, VmType};
pub use cost::{config_cost, Observation, ObservationMode, PiMeasurement};
pub use error::{Error, Result};
pub use pareto::{pareto_front, recommend, FrontPoint, ParetoFront};
pub use search::{run_search, Budget, SearchPolicy, SearchResult};
pub use surrogate::{FittedSurrogate, Posterior, Surrogate, SurrogateKind};
pub use synthcloud::{AmdahlModel, SynthBackend};
pub use trace::{load_trace, ObservationBackend, Trace, TraceBackend};
