//! Runtime/cost Pareto fronts, normalization and front quality.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::catalog::CloudConfiguration;
use crate::cost::Observation;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontPoint {
    pub config: CloudConfiguration,
    pub runtime_s: f64,
    pub cost_usd: f64,
    /// Fraction of repeated runs that observed this configuration.
    pub selection_frequency: f64,
}

impl FrontPoint {
    pub fn new(config: CloudConfiguration, runtime_s: f64, cost_usd: f64) -> Self {
        Self {
            config,
            runtime_s,
            cost_usd,
            selection_frequency: 1.0,
        }
    }

    /// `self` is no worse on both objectives and better on at least one.
    pub fn dominates(&self, other: &FrontPoint) -> bool {
        self.runtime_s <= other.runtime_s
            && self.cost_usd <= other.cost_usd
            && (self.runtime_s < other.runtime_s || self.cost_usd < other.cost_usd)
    }
}

/// Non-dominated points sorted by runtime ascending (cost strictly descending).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoFront {
    pub points: Vec<FrontPoint>,
}

impl ParetoFront {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn contains(&self, config: CloudConfiguration) -> bool {
        self.points.iter().any(|p| p.config == config)
    }
}

/// Extracts the non-dominated subset (both objectives minimized). Among
/// points with identical objectives the lowest grid coordinate is kept.
pub fn pareto_front(points: &[FrontPoint]) -> Result<ParetoFront> {
    if points.is_empty() {
        return Err(Error::validation("cannot build a Pareto front from no points"));
    }
    if let Some(p) = points
        .iter()
        .find(|p| !(p.runtime_s.is_finite() && p.cost_usd.is_finite()))
    {
        return Err(Error::validation(format!("non-finite objective at {:?}", p.config)));
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| {
        a.runtime_s
            .total_cmp(&b.runtime_s)
            .then(a.cost_usd.total_cmp(&b.cost_usd))
            .then(a.config.cmp(&b.config))
    });
    let mut front: Vec<FrontPoint> = Vec::new();
    for p in sorted {
        if front.last().is_none_or(|last| p.cost_usd < last.cost_usd) {
            front.push(p);
        }
    }
    Ok(ParetoFront { points: front })
}

/// Per-axis ranges used to map objectives onto `[0,1]` with 1 = best.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBounds {
    pub runtime: (f64, f64),
    pub cost: (f64, f64),
}

impl ObjectiveBounds {
    pub fn of(points: &[(f64, f64)]) -> Option<Self> {
        let first = points.first()?;
        let mut b = ObjectiveBounds {
            runtime: (first.0, first.0),
            cost: (first.1, first.1),
        };
        for &(r, c) in points {
            b.runtime = (b.runtime.0.min(r), b.runtime.1.max(r));
            b.cost = (b.cost.0.min(c), b.cost.1.max(c));
        }
        Some(b)
    }

    /// `(max − v) / (max − min)` per axis; a degenerate axis maps to 1.
    pub fn normalize(&self, runtime: f64, cost: f64) -> [f64; 2] {
        let axis = |v: f64, (lo, hi): (f64, f64)| {
            if hi > lo {
                ((hi - v) / (hi - lo)).clamp(0.0, 1.0)
            } else {
                1.0
            }
        };
        [axis(runtime, self.runtime), axis(cost, self.cost)]
    }
}

/// Normalizes `(runtime, cost)` pairs against their own ranges.
pub fn normalize_objectives(points: &[(f64, f64)]) -> Vec<[f64; 2]> {
    match ObjectiveBounds::of(points) {
        None => Vec::new(),
        Some(b) => points.iter().map(|&(r, c)| b.normalize(r, c)).collect(),
    }
}

/// Area of the part of the unit square dominated by `front` toward the
/// (1,1) corner, with reference point (0,0). Inputs need not be a proper
/// front; dominated points simply add nothing.
pub fn front_area(front: &[[f64; 2]]) -> f64 {
    let mut pts: Vec<[f64; 2]> = front
        .iter()
        .map(|p| [p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0)])
        .collect();
    pts.sort_by(|a, b| b[0].total_cmp(&a[0]).then(b[1].total_cmp(&a[1])));
    let mut area = 0.0;
    let mut height: f64 = 0.0;
    for (k, p) in pts.iter().enumerate() {
        height = height.max(p[1]);
        let next_x = pts.get(k + 1).map_or(0.0, |q| q[0]);
        area += (p[0] - next_x) * height;
    }
    area
}

/// Number of recommendations and dominated area under `bounds`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontMetrics {
    pub count: usize,
    pub area: f64,
}

pub fn front_metrics(front: &ParetoFront, bounds: &ObjectiveBounds) -> FrontMetrics {
    let normalized: Vec<[f64; 2]> = front
        .points
        .iter()
        .map(|p| bounds.normalize(p.runtime_s, p.cost_usd))
        .collect();
    FrontMetrics {
        count: front.len(),
        area: front_area(&normalized),
    }
}

/// Every distinct feasible configuration observed across `runs`, with the
/// fraction of runs that observed it. Ordered by configuration.
pub fn observed_points(runs: &[Vec<Observation>]) -> Vec<FrontPoint> {
    let mut seen: BTreeMap<CloudConfiguration, (FrontPoint, usize)> = BTreeMap::new();
    for run in runs {
        let mut in_run: Vec<CloudConfiguration> = Vec::new();
        for obs in run.iter().filter(|o| o.feasible) {
            if in_run.contains(&obs.config) {
                continue;
            }
            in_run.push(obs.config);
            seen.entry(obs.config)
                .or_insert_with(|| {
                    (
                        FrontPoint::new(obs.config, obs.runtime_estimate_s, obs.objective_cost_usd),
                        0,
                    )
                })
                .1 += 1;
        }
    }
    let total = runs.len().max(1) as f64;
    seen.into_values()
        .map(|(mut p, hits)| {
            p.selection_frequency = hits as f64 / total;
            p
        })
        .collect()
}

/// Pareto-optimal observed configurations, ordered from the cost-efficient
/// end to the runtime-efficient end (runtime descending).
pub fn recommend(runs: &[Vec<Observation>]) -> Result<Vec<FrontPoint>> {
    let points = observed_points(runs);
    if points.is_empty() {
        return Err(Error::validation("no feasible observation to recommend from"));
    }
    let mut front = pareto_front(&points)?.points;
    front.reverse();
    Ok(front)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::ObservationMode;

    fn fp(k: usize, r: f64, c: f64) -> FrontPoint {
        FrontPoint::new(CloudConfiguration::new(k, 1), r, c)
    }

    #[test]
    fn front_examples() {
        let single = pareto_front(&[fp(0, 3.0, 4.0)]).unwrap();
        assert_eq!(single.len(), 1);
        let two = pareto_front(&[fp(1, 2.0, 2.0), fp(0, 1.0, 1.0)]).unwrap();
        assert_eq!(two.points, vec![fp(0, 1.0, 1.0)]);
        assert!(pareto_front(&[]).is_err());
    }

    #[test]
    fn duplicates_keep_lowest_coordinate() {
        let f = pareto_front(&[fp(5, 1.0, 1.0), fp(2, 1.0, 1.0), fp(9, 1.0, 1.0)]).unwrap();
        assert_eq!(f.points.len(), 1);
        assert_eq!(f.points[0].config.vm_index, 2);
    }

    #[test]
    fn equal_runtime_keeps_cheaper() {
        let f = pareto_front(&[fp(0, 1.0, 2.0), fp(1, 1.0, 1.0), fp(2, 0.5, 3.0)]).unwrap();
        let ids: Vec<usize> = f.points.iter().map(|p| p.config.vm_index).collect();
        assert_eq!(ids, [2, 1]);
    }

    #[test]
    fn normalization_examples() {
        let n = normalize_objectives(&[(1.0, 2.0), (3.0, 4.0), (2.0, 6.0)]);
        assert_eq!(n[0], [1.0, 1.0]);
        assert_eq!(n[2][1], 0.0);
        assert_eq!(n[1][1], 0.5);
        assert_eq!(normalize_objectives(&[(5.0, 5.0), (5.0, 5.0)]), vec![[1.0, 1.0]; 2]);
    }

    #[test]
    fn area_examples() {
        assert_eq!(front_area(&[]), 0.0);
        assert_eq!(front_area(&[[1.0, 1.0]]), 1.0);
        assert_eq!(front_area(&[[0.5, 0.5]]), 0.25);
        assert!((front_area(&[[0.2, 0.9], [0.8, 0.4]]) - 0.42).abs() < 1e-12);
        // A dominated point adds nothing.
        assert!((front_area(&[[0.2, 0.9], [0.8, 0.4], [0.1, 0.1]]) - 0.42).abs() < 1e-12);
    }

    fn obs(k: usize, r: f64, c: f64, feasible: bool) -> Observation {
        Observation {
            config: CloudConfiguration::new(k, 1),
            runtime_estimate_s: r,
            charged_cost_usd: c,
            objective_cost_usd: c,
            feasible,
            mode: ObservationMode::Full,
        }
    }

    #[test]
    fn recommend_examples() {
        let runs = vec![vec![obs(3, 10.0, 1.0, true), obs(4, 0.0, 0.0, false)]; 3];
        let rec = recommend(&runs).unwrap();
        assert_eq!(rec.len(), 1);
        assert_eq!(rec[0].selection_frequency, 1.0);

        let runs = vec![
            vec![obs(0, 10.0, 1.0, true), obs(1, 2.0, 5.0, true)],
            vec![obs(0, 10.0, 1.0, true)],
        ];
        let rec = recommend(&runs).unwrap();
        assert_eq!(rec.len(), 2);
        assert_eq!(rec[0].config.vm_index, 0, "cost-efficient end first");
        assert_eq!(rec[0].selection_frequency, 1.0);
        assert_eq!(rec[1].selection_frequency, 0.5);

        assert!(recommend(&[vec![obs(0, 0.0, 0.0, false)]]).is_err());
    }
}
