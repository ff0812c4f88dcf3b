//! Bootstrap random forest of CART regression trees.
//!
//! The spread of per-tree predictions serves as the uncertainty estimate.
//! The training set is put in canonical order before resampling, and tree `t`
//! draws its bootstrap from ChaCha8 stream `t` of the forest seed, so the
//! fitted forest does not depend on the order in which points were supplied.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_training_set, Posterior};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RfParams {
    pub tree_count: usize,
    pub min_leaf: usize,
}

impl Default for RfParams {
    fn default() -> Self {
        Self {
            tree_count: 100,
            min_leaf: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        /// Indices into the tree's node arena.
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<TreeNode>,
}

impl RegressionTree {
    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn predict(&self, point: [f64; 2]) -> f64 {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                TreeNode::Leaf(v) => return v,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => k = if point[feature] <= threshold { left } else { right },
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfModel {
    params: RfParams,
    trees: Vec<RegressionTree>,
}

impl RfModel {
    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }

    pub fn params(&self) -> &RfParams {
        &self.params
    }

    pub fn dump(&self) -> String {
        let nodes: usize = self.trees.iter().map(|t| t.nodes.len()).sum();
        format!(
            "model=rf\ntree_count={}\nmin_leaf={}\ntotal_nodes={}\n",
            self.params.tree_count, self.params.min_leaf, nodes
        )
    }
}

struct Builder<'a> {
    points: &'a [[f64; 2]],
    targets: &'a [f64],
    min_leaf: usize,
    nodes: Vec<TreeNode>,
}

impl Builder<'_> {
    fn mean(&self, samples: &[usize]) -> f64 {
        samples.iter().map(|&s| self.targets[s]).sum::<f64>() / samples.len() as f64
    }

    /// Best (feature, threshold) by summed squared error, if any split is valid.
    fn best_split(&self, samples: &mut [usize]) -> Option<(usize, f64)> {
        let n = samples.len();
        let total: f64 = samples.iter().map(|&s| self.targets[s]).sum();
        let total_sq: f64 = samples.iter().map(|&s| self.targets[s].powi(2)).sum();
        let parent_sse = total_sq - total * total / n as f64;
        let mut best: Option<(f64, usize, f64)> = None;

        for feature in 0..2 {
            samples.sort_by(|&a, &b| {
                self.points[a][feature]
                    .total_cmp(&self.points[b][feature])
                    .then(a.cmp(&b))
            });
            let (mut left_sum, mut left_sq) = (0.0, 0.0);
            for k in 1..n {
                let y = self.targets[samples[k - 1]];
                left_sum += y;
                left_sq += y * y;
                if k < self.min_leaf || n - k < self.min_leaf {
                    continue;
                }
                let lo = self.points[samples[k - 1]][feature];
                let hi = self.points[samples[k]][feature];
                if lo >= hi {
                    continue;
                }
                let right_sum = total - left_sum;
                let right_sq = total_sq - left_sq;
                let sse =
                    (left_sq - left_sum * left_sum / k as f64) + (right_sq - right_sum * right_sum / (n - k) as f64);
                if best.is_none_or(|(b, _, _)| sse < b) {
                    best = Some((sse, feature, 0.5 * (lo + hi)));
                }
            }
        }
        best.filter(|(sse, _, _)| *sse < parent_sse - 1e-12 * parent_sse.abs().max(1e-300))
            .map(|(_, f, t)| (f, t))
    }

    fn grow(&mut self, samples: &mut [usize]) -> usize {
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf(self.mean(samples)));
        if samples.len() < 2 * self.min_leaf {
            return id;
        }
        let Some((feature, threshold)) = self.best_split(samples) else {
            return id;
        };
        let mut left: Vec<usize> = samples
            .iter()
            .copied()
            .filter(|&s| self.points[s][feature] <= threshold)
            .collect();
        let mut right: Vec<usize> = samples
            .iter()
            .copied()
            .filter(|&s| self.points[s][feature] > threshold)
            .collect();
        let l = self.grow(&mut left);
        let r = self.grow(&mut right);
        self.nodes[id] = TreeNode::Split {
            feature,
            threshold,
            left: l,
            right: r,
        };
        id
    }
}

pub fn rf_fit(points: &[[f64; 2]], targets: &[f64], seed: u64) -> Result<RfModel> {
    rf_fit_with(points, targets, seed, RfParams::default())
}

pub fn rf_fit_with(points: &[[f64; 2]], targets: &[f64], seed: u64, params: RfParams) -> Result<RfModel> {
    check_training_set(points, targets)?;
    if params.tree_count < 2 {
        return Err(Error::validation("a forest needs at least 2 trees"));
    }
    if params.min_leaf < 1 {
        return Err(Error::validation("minimum leaf size must be >= 1"));
    }

    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a][0]
            .total_cmp(&points[b][0])
            .then(points[a][1].total_cmp(&points[b][1]))
            .then(targets[a].total_cmp(&targets[b]))
    });
    let pts: Vec<[f64; 2]> = order.iter().map(|&k| points[k]).collect();
    let ys: Vec<f64> = order.iter().map(|&k| targets[k]).collect();

    let n = pts.len();
    let trees = (0..params.tree_count)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let mut sample: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let mut builder = Builder {
                points: &pts,
                targets: &ys,
                min_leaf: params.min_leaf,
                nodes: Vec::new(),
            };
            builder.grow(&mut sample);
            RegressionTree { nodes: builder.nodes }
        })
        .collect();
    Ok(RfModel { params, trees })
}

/// Mean and sample standard deviation of the per-tree predictions.
pub fn rf_predict(model: &RfModel, point: [f64; 2]) -> Posterior {
    let preds: Vec<f64> = model.trees.iter().map(|t| t.predict(point)).collect();
    let m = preds.len() as f64;
    let mean = preds.iter().sum::<f64>() / m;
    let var = preds.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (m - 1.0);
    Posterior {
        mean,
        stddev: var.max(0.0).sqrt(),
    }
}
