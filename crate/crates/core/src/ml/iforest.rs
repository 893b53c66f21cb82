//! Isolation forest.
//!
//! Score is `2^(-E[h(x)] / c(ψ))`, where `h` is the path length through a
//! tree (plus `c(leaf size)` for unresolved leaves) and `ψ` the subsample
//! size. Each tree draws from its own RNG stream derived from the seed and
//! the tree index, so parallel and sequential fits are identical.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::DetectorConfig;
use crate::error::Result;
use crate::exec::{derive_seed, Exec};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Debug, Clone, PartialEq)]
pub struct IForestParams {
    pub n_estimators: usize,
    /// Fraction of rows per tree; `None` means `min(256, n)` rows.
    pub max_samples: Option<f64>,
    pub contamination: f64,
    pub max_features: f64,
}

impl IForestParams {
    pub fn from_config(cfg: &DetectorConfig) -> Result<Self> {
        Ok(IForestParams {
            n_estimators: cfg.count("n_estimators", 100)?,
            max_samples: match cfg.params.get("max_samples") {
                None => None,
                Some(_) => Some(cfg.ranged("max_samples", 1.0, 0.0, 1.0, true)?),
            },
            contamination: cfg.contamination()?,
            max_features: cfg.ranged("max_features", 1.0, 0.0, 1.0, true)?,
        })
    }
}

/// Average path length of an unsuccessful BST search over `n` points.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let n = n as f64;
            2.0 * ((n - 1.0).ln() + EULER_GAMMA) - 2.0 * (n - 1.0) / n
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf { size: usize },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsolationTree {
    nodes: Vec<Node>,
}

impl IsolationTree {
    fn build(rows: &[Vec<f64>], sample: &[usize], features: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let max_depth = (sample.len() as f64).log2().ceil() as usize;
        let mut tree = IsolationTree { nodes: Vec::new() };
        tree.grow(rows, sample.to_vec(), features, 0, max_depth, rng);
        tree
    }

    fn grow(
        &mut self,
        rows: &[Vec<f64>],
        idx: Vec<usize>,
        features: &[usize],
        depth: usize,
        max_depth: usize,
        rng: &mut ChaCha8Rng,
    ) -> usize {
        let me = self.nodes.len();
        self.nodes.push(Node::Leaf { size: idx.len() });
        if depth >= max_depth || idx.len() <= 1 {
            return me;
        }
        let ranges: Vec<(usize, f64, f64)> = features
            .iter()
            .filter_map(|&f| {
                let (lo, hi) = idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                    (lo.min(rows[i][f]), hi.max(rows[i][f]))
                });
                (hi > lo).then_some((f, lo, hi))
            })
            .collect();
        if ranges.is_empty() {
            return me;
        }
        let (feature, lo, hi) = ranges[rng.random_range(0..ranges.len())];
        let threshold = rng.random_range(lo..hi);
        let (l, r): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| rows[i][feature] < threshold);
        let left = self.grow(rows, l, features, depth + 1, max_depth, rng);
        let right = self.grow(rows, r, features, depth + 1, max_depth, rng);
        self.nodes[me] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        me
    }

    pub fn path_length(&self, x: &[f64]) -> f64 {
        let mut node = 0;
        let mut depth = 0.0;
        loop {
            match self.nodes[node] {
                Node::Leaf { size } => return depth + average_path_length(size),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[feature] < threshold { left } else { right };
                    depth += 1.0;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsolationForest {
    pub trees: Vec<IsolationTree>,
    pub subsample: usize,
}

impl IsolationForest {
    pub fn fit(params: &IForestParams, rows: &[Vec<f64>], seed: u64, exec: Exec) -> Result<Self> {
        let n = rows.len();
        let d = rows[0].len();
        let subsample = match params.max_samples {
            None => n.min(256),
            Some(f) => ((f * n as f64).round() as usize).clamp(2.min(n), n),
        };
        let n_feat = ((params.max_features * d as f64).round() as usize).clamp(1, d);
        let trees = exec.map_range(params.n_estimators, |t| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[t as u64]));
            let sample = index::sample(&mut rng, n, subsample).into_vec();
            let mut features = index::sample(&mut rng, d, n_feat).into_vec();
            features.sort_unstable();
            IsolationTree::build(rows, &sample, &features, &mut rng)
        });
        Ok(IsolationForest { trees, subsample })
    }

    pub fn mean_path_length(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.path_length(x)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn score(&self, rows: &[Vec<f64>], exec: Exec) -> Vec<f64> {
        let c = average_path_length(self.subsample).max(f64::MIN_POSITIVE);
        exec.map_slice(rows, |r| 2f64.powf(-self.mean_path_length(r) / c))
    }
}
