//! Recorded per-configuration measurements and their replay as an
//! observation backend.
//!
//! Trace files are CSV with the header
//! `workload,class,vm_name,n,pi_times_s,total_iterations,total_runtime_s,feasible`.
//! `pi_times_s` holds `;`-separated iteration times; `total_runtime_s` and,
//! for infeasible rows, the timing fields may be empty.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::catalog::{csv_error, parse_field, CloudConfiguration, ConfigurationSpace};
use crate::cost::{config_cost, pi_charge, pi_runtime_estimate, Observation, ObservationMode, PiMeasurement};
use crate::error::{Error, Result};
use crate::search::{failure_charge, DEFAULT_FAILURE_DETECT_S};

pub const TRACE_HEADER: [&str; 8] = [
    "workload",
    "class",
    "vm_name",
    "n",
    "pi_times_s",
    "total_iterations",
    "total_runtime_s",
    "feasible",
];

/// Anything that can answer "what happens if we run on this configuration".
///
/// Implementations must be static: observing the same configuration in the
/// same mode twice yields the same observation.
pub trait ObservationBackend: Sync {
    fn space(&self) -> &ConfigurationSpace;

    fn observe(&self, config: CloudConfiguration, mode: ObservationMode) -> Result<Observation>;
}

impl<B: ObservationBackend + ?Sized> ObservationBackend for &B {
    fn space(&self) -> &ConfigurationSpace {
        (**self).space()
    }

    fn observe(&self, config: CloudConfiguration, mode: ObservationMode) -> Result<Observation> {
        (**self).observe(config, mode)
    }
}

impl<B: ObservationBackend + ?Sized + Send> ObservationBackend for Box<B> {
    fn space(&self) -> &ConfigurationSpace {
        (**self).space()
    }

    fn observe(&self, config: CloudConfiguration, mode: ObservationMode) -> Result<Observation> {
        (**self).observe(config, mode)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub workload: String,
    pub class: String,
    pub vm_name: String,
    pub n: u32,
    pub pi_times_s: Vec<f64>,
    pub total_iterations: Option<u32>,
    pub total_runtime_s: Option<f64>,
    pub feasible: bool,
}

impl TraceRow {
    /// `kernel/class`, or just the kernel when the class is empty.
    pub fn workload_id(&self) -> String {
        workload_id(&self.workload, &self.class)
    }

    pub fn pi_measurement(&self) -> Result<PiMeasurement> {
        let total = self
            .total_iterations
            .ok_or_else(|| Error::validation("row has no total_iterations"))?;
        PiMeasurement::new(self.pi_times_s.clone(), total)
    }

    fn validate(&self) -> Result<()> {
        if self.workload.is_empty() || self.vm_name.is_empty() {
            return Err(Error::validation("workload and vm_name must not be empty"));
        }
        if self.n == 0 {
            return Err(Error::validation("n must be >= 1"));
        }
        // Failed rows may omit PI data; whatever is present must still be valid.
        if self.feasible || (!self.pi_times_s.is_empty() && self.total_iterations.is_some()) {
            self.pi_measurement()?;
        }
        if let Some(t) = self.total_runtime_s {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::validation(format!("total_runtime_s must be > 0, got {t}")));
            }
        }
        Ok(())
    }
}

pub fn workload_id(workload: &str, class: &str) -> String {
    if class.is_empty() {
        workload.to_string()
    } else {
        format!("{workload}/{class}")
    }
}

type TraceKey = (String, String, u32);

/// Rows indexed by `(workload id, vm name, n)`.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    rows: Vec<TraceRow>,
    index: HashMap<TraceKey, usize>,
}

fn parse_row(record: &csv::StringRecord, line: usize) -> Result<TraceRow> {
    if record.len() != TRACE_HEADER.len() {
        return Err(Error::parse(
            line,
            format!("expected {} fields, found {}", TRACE_HEADER.len(), record.len()),
        ));
    }
    let pi_times_s = if record[4].is_empty() {
        Vec::new()
    } else {
        record[4]
            .split(';')
            .map(|t| parse_field::<f64>(t, "pi_times_s", line))
            .collect::<Result<_>>()?
    };
    fn optional(raw: &str) -> Option<&str> {
        (!raw.is_empty()).then_some(raw)
    }
    let feasible = match record[7].to_ascii_lowercase().as_str() {
        "true" | "1" => true,
        "false" | "0" => false,
        other => {
            return Err(Error::parse(
                line,
                format!("feasible: expected true/false, got `{other}`"),
            ))
        }
    };
    let row = TraceRow {
        workload: record[0].to_string(),
        class: record[1].to_string(),
        vm_name: record[2].to_string(),
        n: parse_field(&record[3], "n", line)?,
        pi_times_s,
        total_iterations: optional(&record[5])
            .map(|v| parse_field(v, "total_iterations", line))
            .transpose()?,
        total_runtime_s: optional(&record[6])
            .map(|v| parse_field(v, "total_runtime_s", line))
            .transpose()?,
        feasible,
    };
    row.validate().map_err(|e| Error::parse(line, e.to_string()))?;
    Ok(row)
}

/// Parses a trace file. VM names are not checked against any catalog here;
/// unknown names surface when a backend is built.
pub fn load_trace<R: Read>(source: R) -> Result<Trace> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(source);
    let header = reader.headers().map_err(|e| csv_error(e, 1))?.clone();
    if header.iter().collect::<Vec<_>>() != TRACE_HEADER {
        let line = header.position().map_or(1, |p| p.line() as usize);
        return Err(Error::parse(
            line,
            format!("expected header `{}`", TRACE_HEADER.join(",")),
        ));
    }
    let mut trace = Trace::default();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(e, 0))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let row = parse_row(&record, line)?;
        trace.push(row).map_err(|e| match e {
            Error::Validation(m) => Error::Validation(format!("{m} at line {line}")),
            other => other,
        })?;
    }
    Ok(trace)
}

/// Writes rows in the trace file format.
pub fn write_trace<W: Write>(rows: &[TraceRow], sink: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    writer.write_record(TRACE_HEADER).map_err(io)?;
    for row in rows {
        let times = row.pi_times_s.iter().map(f64::to_string).collect::<Vec<_>>().join(";");
        writer
            .write_record([
                row.workload.clone(),
                row.class.clone(),
                row.vm_name.clone(),
                row.n.to_string(),
                times,
                row.total_iterations.map(|v| v.to_string()).unwrap_or_default(),
                row.total_runtime_s.map(|v| v.to_string()).unwrap_or_default(),
                row.feasible.to_string(),
            ])
            .map_err(io)?;
    }
    writer.flush()?;
    Ok(())
}

/// Per-workload summary produced by [`Trace::coverage`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadCoverage {
    pub workload: String,
    pub rows: usize,
    pub feasible: usize,
    pub with_full_runtime: usize,
    /// Grid configurations with no row.
    pub missing: usize,
    pub unknown_vm_rows: usize,
}

impl Trace {
    pub fn from_rows(rows: impl IntoIterator<Item = TraceRow>) -> Result<Self> {
        let mut trace = Trace::default();
        for row in rows {
            row.validate()?;
            trace.push(row)?;
        }
        Ok(trace)
    }

    fn push(&mut self, row: TraceRow) -> Result<()> {
        let key = (row.workload_id(), row.vm_name.clone(), row.n);
        if self.index.contains_key(&key) {
            return Err(Error::validation(format!(
                "duplicate trace row for ({}, {}, {})",
                key.0, key.1, key.2
            )));
        }
        self.index.insert(key, self.rows.len());
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[TraceRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, workload: &str, vm_name: &str, n: u32) -> Option<&TraceRow> {
        self.index
            .get(&(workload.to_string(), vm_name.to_string(), n))
            .map(|&k| &self.rows[k])
    }

    /// Distinct workload ids in first-appearance order.
    pub fn workloads(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for row in &self.rows {
            let id = row.workload_id();
            if !out.contains(&id) {
                out.push(id);
            }
        }
        out
    }

    pub fn coverage(&self, space: &ConfigurationSpace) -> Vec<WorkloadCoverage> {
        let mut by_workload: BTreeMap<String, WorkloadCoverage> = BTreeMap::new();
        for row in &self.rows {
            let id = row.workload_id();
            let entry = by_workload.entry(id.clone()).or_insert_with(|| WorkloadCoverage {
                workload: id,
                rows: 0,
                feasible: 0,
                with_full_runtime: 0,
                missing: 0,
                unknown_vm_rows: 0,
            });
            entry.rows += 1;
            entry.feasible += usize::from(row.feasible);
            entry.with_full_runtime += usize::from(row.feasible && row.total_runtime_s.is_some());
            let known = space.vm_by_name(&row.vm_name).is_some() && space.sizes().contains(&row.n);
            entry.unknown_vm_rows += usize::from(!known);
        }
        for entry in by_workload.values_mut() {
            entry.missing = space
                .configs()
                .filter(|cfg| {
                    let vm = &space.vms()[cfg.vm_index].name;
                    self.get(&entry.workload, vm, cfg.n).is_none()
                })
                .count();
        }
        by_workload.into_values().collect()
    }
}

/// Replays one workload of a trace over a configuration space.
#[derive(Debug, Clone)]
pub struct TraceBackend {
    space: ConfigurationSpace,
    workload: String,
    rows: Vec<Option<TraceRow>>,
    failure_detect_s: f64,
}

impl TraceBackend {
    /// `workload` may be omitted when the trace holds exactly one workload.
    pub fn new(trace: &Trace, space: ConfigurationSpace, workload: Option<&str>) -> Result<Self> {
        let workloads = trace.workloads();
        let workload = match workload {
            Some(w) => {
                if !workloads.iter().any(|x| x == w) {
                    return Err(Error::Lookup(format!("workload `{w}` not present in trace")));
                }
                w.to_string()
            }
            None => match workloads.as_slice() {
                [only] => only.clone(),
                [] => return Err(Error::validation("trace is empty")),
                _ => {
                    return Err(Error::validation(format!(
                        "trace holds {} workloads ({}); choose one",
                        workloads.len(),
                        workloads.join(", ")
                    )))
                }
            },
        };
        let rows = space
            .configs()
            .map(|cfg| trace.get(&workload, &space.vms()[cfg.vm_index].name, cfg.n).cloned())
            .collect();
        Ok(Self {
            space,
            workload,
            rows,
            failure_detect_s: DEFAULT_FAILURE_DETECT_S,
        })
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

    pub fn workload(&self) -> &str {
        &self.workload
    }
}

impl ObservationBackend for TraceBackend {
    fn space(&self) -> &ConfigurationSpace {
        &self.space
    }

    fn observe(&self, config: CloudConfiguration, mode: ObservationMode) -> Result<Observation> {
        let vm = self.space.vm(config)?;
        let row = self.rows[self.space.index_of(config)?].as_ref().ok_or_else(|| {
            Error::Lookup(format!(
                "no trace row for workload `{}` on {}:{}",
                self.workload, vm.name, config.n
            ))
        })?;
        if !row.feasible {
            return Ok(Observation::infeasible(
                config,
                mode,
                failure_charge(vm, config.n, self.failure_detect_s)?,
            ));
        }
        let price = vm.price_usd_hour;
        match mode {
            ObservationMode::Full => {
                let runtime = row.total_runtime_s.ok_or_else(|| Error::ModeUnavailable {
                    mode: "full",
                    what: format!("{}:{} (no total_runtime_s)", vm.name, config.n),
                })?;
                let cost = config_cost(runtime, price, config.n)?;
                Ok(Observation {
                    config,
                    runtime_estimate_s: runtime,
                    charged_cost_usd: cost,
                    objective_cost_usd: cost,
                    feasible: true,
                    mode,
                })
            }
            ObservationMode::Pi => {
                let pi = row.pi_measurement()?;
                let runtime = pi_runtime_estimate(&pi)?;
                Ok(Observation {
                    config,
                    runtime_estimate_s: runtime,
                    charged_cost_usd: pi_charge(&pi, price, config.n)?,
                    objective_cost_usd: config_cost(runtime, price, config.n)?,
                    feasible: true,
                    mode,
                })
            }
        }
    }
}
