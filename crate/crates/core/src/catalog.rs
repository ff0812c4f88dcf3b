//! VM catalog and the two-dimensional configuration grid.
//!
//! A search space is the cartesian product of an ordered VM axis and a
//! strictly increasing cluster-size axis. The VM axis is sorted by hourly
//! price, then memory, then name, which places cheap machines that tend to
//! run out of memory at one end and over-provisioned machines at the other.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The default cluster-size axis.
pub const DEFAULT_SIZES: [u32; 6] = [1, 2, 4, 8, 16, 32];

/// Header every catalog file must carry.
pub const CATALOG_HEADER: [&str; 5] = ["name", "vcpus", "mem_gib", "network_gbps", "price_usd_hour"];

const BUILTIN_CATALOG: &str = include_str!("../data/aws_hpc.csv");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmType {
    pub name: String,
    pub vcpus: u32,
    pub mem_gib: f64,
    pub network_gbps: f64,
    pub price_usd_hour: f64,
}

impl VmType {
    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::validation("VM name must not be empty"));
        }
        if self.vcpus < 1 {
            return Err(Error::validation(format!("{}: vcpus must be >= 1", self.name)));
        }
        for (what, v) in [
            ("mem_gib", self.mem_gib),
            ("network_gbps", self.network_gbps),
            ("price_usd_hour", self.price_usd_hour),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::validation(format!("{}: {what} must be > 0, got {v}", self.name)));
            }
        }
        Ok(())
    }
}

/// A point of the search space: a VM type (by position on the ordered VM
/// axis) and an instance count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CloudConfiguration {
    pub vm_index: usize,
    pub n: u32,
}

impl CloudConfiguration {
    pub fn new(vm_index: usize, n: u32) -> Self {
        Self { vm_index, n }
    }
}

/// Parses a catalog file. Rows are returned in file order.
pub fn load_catalog<R: Read>(source: R) -> Result<Vec<VmType>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(source);

    let header = reader.headers().map_err(|e| csv_error(e, 1))?.clone();
    let names: Vec<&str> = header.iter().collect();
    if names.is_empty() || (names.len() == 1 && names[0].is_empty()) {
        return Err(Error::validation("catalog is empty"));
    }
    if names != CATALOG_HEADER {
        let line = header.position().map_or(1, |p| p.line() as usize);
        return Err(Error::parse(
            line,
            format!(
                "expected header `{}`, found `{}`",
                CATALOG_HEADER.join(","),
                names.join(",")
            ),
        ));
    }

    let mut vms = Vec::new();
    let mut seen = HashSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(e, 0))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != CATALOG_HEADER.len() {
            return Err(Error::parse(
                line,
                format!("expected {} fields, found {}", CATALOG_HEADER.len(), record.len()),
            ));
        }
        let vm = VmType {
            name: record[0].to_string(),
            vcpus: parse_field(&record[1], "vcpus", line)?,
            mem_gib: parse_field(&record[2], "mem_gib", line)?,
            network_gbps: parse_field(&record[3], "network_gbps", line)?,
            price_usd_hour: parse_field(&record[4], "price_usd_hour", line)?,
        };
        vm.validate().map_err(|e| Error::parse(line, e.to_string()))?;
        if !seen.insert(vm.name.clone()) {
            return Err(Error::validation(format!(
                "duplicate VM name `{}` at line {line}",
                vm.name
            )));
        }
        vms.push(vm);
    }
    if vms.is_empty() {
        return Err(Error::validation("catalog contains no VM rows"));
    }
    Ok(vms)
}

/// The bundled 32-VM AWS catalog.
pub fn builtin_catalog() -> Vec<VmType> {
    load_catalog(BUILTIN_CATALOG.as_bytes()).expect("bundled catalog is well formed")
}

pub(crate) fn parse_field<T: std::str::FromStr>(raw: &str, field: &str, line: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.trim()
        .parse::<T>()
        .map_err(|e| Error::parse(line, format!("{field}: cannot parse `{raw}`: {e}")))
}

pub(crate) fn csv_error(err: csv::Error, fallback_line: usize) -> Error {
    let line = err.position().map_or(fallback_line, |p| p.line() as usize);
    Error::parse(line, err.to_string())
}

fn axis_order(a: &VmType, b: &VmType) -> Ordering {
    a.price_usd_hour
        .total_cmp(&b.price_usd_hour)
        .then(a.mem_gib.total_cmp(&b.mem_gib))
        .then_with(|| a.name.cmp(&b.name))
}

/// Sorts the VM axis by price, then memory, then name (all ascending).
pub fn order_vm_axis(vms: &[VmType]) -> Result<Vec<VmType>> {
    if vms.is_empty() {
        return Err(Error::validation("cannot order an empty VM list"));
    }
    let mut ordered = vms.to_vec();
    ordered.sort_by(axis_order);
    Ok(ordered)
}

/// The full grid of configurations over an ordered VM axis and a size axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigurationSpace {
    vms: Vec<VmType>,
    sizes: Vec<u32>,
}

/// Builds the grid. `vms` must already be in axis order (see [`order_vm_axis`]).
pub fn enumerate_space(vms: Vec<VmType>, sizes: Vec<u32>) -> Result<ConfigurationSpace> {
    if vms.is_empty() {
        return Err(Error::validation("VM axis is empty"));
    }
    if sizes.is_empty() {
        return Err(Error::validation("size axis is empty"));
    }
    if sizes[0] == 0 {
        return Err(Error::validation("cluster sizes must be positive"));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::validation(format!(
            "size axis must be strictly increasing, got {sizes:?}"
        )));
    }
    let mut names = HashSet::new();
    for vm in &vms {
        vm.validate()?;
        if !names.insert(vm.name.as_str()) {
            return Err(Error::validation(format!("duplicate VM name `{}`", vm.name)));
        }
    }
    Ok(ConfigurationSpace { vms, sizes })
}

impl ConfigurationSpace {
    /// Orders `vms` and builds the grid in one step.
    pub fn from_catalog(vms: &[VmType], sizes: &[u32]) -> Result<Self> {
        enumerate_space(order_vm_axis(vms)?, sizes.to_vec())
    }

    /// The bundled catalog over the default size axis (32 x 6).
    pub fn builtin() -> Self {
        Self::from_catalog(&builtin_catalog(), &DEFAULT_SIZES).expect("bundled catalog is valid")
    }

    pub fn vms(&self) -> &[VmType] {
        &self.vms
    }

    pub fn sizes(&self) -> &[u32] {
        &self.sizes
    }

    pub fn len(&self) -> usize {
        self.vms.len() * self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn vm(&self, config: CloudConfiguration) -> Result<&VmType> {
        self.coordinates(config).map(|(i, _)| &self.vms[i])
    }

    pub fn vm_by_name(&self, name: &str) -> Option<usize> {
        self.vms.iter().position(|vm| vm.name == name)
    }

    /// Grid coordinates `(i, j)`: position on the VM axis and on the size axis.
    pub fn coordinates(&self, config: CloudConfiguration) -> Result<(usize, usize)> {
        let j = self.sizes.iter().position(|&s| s == config.n);
        match j {
            Some(j) if config.vm_index < self.vms.len() => Ok((config.vm_index, j)),
            _ => Err(Error::OutOfBounds {
                config,
                vms: self.vms.len(),
                sizes: self.sizes.len(),
            }),
        }
    }

    /// Row-major (VM-major) position of a configuration.
    pub fn index_of(&self, config: CloudConfiguration) -> Result<usize> {
        let (i, j) = self.coordinates(config)?;
        Ok(i * self.sizes.len() + j)
    }

    pub fn config_at(&self, index: usize) -> CloudConfiguration {
        let cols = self.sizes.len();
        CloudConfiguration::new(index / cols, self.sizes[index % cols])
    }

    /// All configurations in grid order (VM-major, sizes ascending).
    pub fn configs(&self) -> impl Iterator<Item = CloudConfiguration> + '_ {
        (0..self.len()).map(move |k| self.config_at(k))
    }

    pub fn contains(&self, config: CloudConfiguration) -> bool {
        self.coordinates(config).is_ok()
    }

    /// `vm_name:n`, used in reports.
    pub fn label(&self, config: CloudConfiguration) -> String {
        match self.vm(config) {
            Ok(vm) => format!("{}:{}", vm.name, config.n),
            Err(_) => format!("#{}:{}", config.vm_index, config.n),
        }
    }
}

/// Maps a configuration to `[0,1]²`. An axis of length one maps to 0.
pub fn normalize_coordinates(space: &ConfigurationSpace, config: CloudConfiguration) -> Result<[f64; 2]> {
    let (i, j) = space.coordinates(config)?;
    let scale = |pos: usize, len: usize| {
        if len <= 1 {
            0.0
        } else {
            pos as f64 / (len - 1) as f64
        }
    };
    Ok([scale(i, space.vms.len()), scale(j, space.sizes.len())])
}

/// Parses a comma-separated size axis such as `1,2,4,8`.
pub fn parse_sizes(raw: &str) -> Result<Vec<u32>> {
    raw.split(',').map(|s| parse_field::<u32>(s, "size", 1)).collect()
}
