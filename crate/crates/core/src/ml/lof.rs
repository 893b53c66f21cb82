//! Local outlier factor.
//!
//! `reach(p, o) = max(k-distance(o), d(p, o))`, `lrd(p) = 1 / mean reach`,
//! `LOF(p) = mean_{o ∈ N_k(p)} lrd(o) / lrd(p)`. Neighbourhoods are exactly
//! `k` rows (ties broken by index). A mean reachability of zero, which only
//! happens with more than `k` duplicates, is floored at `1e-10`.

use super::knn::{check_k, nearest};
use super::DetectorConfig;
use crate::dist_detect::MetricSpec;
use crate::error::{Error, Result};
use crate::exec::Exec;

const REACH_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct LofParams {
    pub n_neighbors: usize,
    pub metric: MetricSpec,
}

impl LofParams {
    pub fn from_config(cfg: &DetectorConfig) -> Result<Self> {
        Ok(LofParams {
            n_neighbors: cfg.count("n_neighbors", 20)?,
            metric: cfg.metric()?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct LofModel {
    k: usize,
    metric: MetricSpec,
    train: Vec<Vec<f64>>,
    k_distance: Vec<f64>,
    lrd: Vec<f64>,
}

fn lrd_of(neigh: &[(usize, f64)], k_distance: &[f64]) -> f64 {
    let mean_reach = neigh
        .iter()
        .map(|&(o, d)| d.max(k_distance[o]))
        .sum::<f64>()
        / neigh.len() as f64;
    1.0 / mean_reach.max(REACH_FLOOR)
}

impl LofModel {
    pub fn fit(params: LofParams, rows: &[Vec<f64>], exec: Exec) -> Result<Self> {
        let k = params.n_neighbors;
        check_k(k, rows.len())?;
        if rows.iter().all(|r| r == &rows[0]) {
            return Err(Error::DegenerateSpread("LOF input rows are all identical".into()));
        }
        let metric = params.metric.resolve(rows)?;
        let neigh = exec.map_slice(rows, |r| nearest(rows, r, k, &metric));
        let k_distance: Vec<f64> = neigh.iter().map(|n| n[k - 1].1).collect();
        let lrd = neigh.iter().map(|n| lrd_of(n, &k_distance)).collect();
        Ok(LofModel {
            k,
            metric,
            train: rows.to_vec(),
            k_distance,
            lrd,
        })
    }

    pub fn score(&self, rows: &[Vec<f64>], exec: Exec) -> Vec<f64> {
        exec.map_slice(rows, |q| {
            let n = nearest(&self.train, q, self.k, &self.metric);
            let lrd_q = lrd_of(&n, &self.k_distance);
            n.iter().map(|&(o, _)| self.lrd[o]).sum::<f64>() / (n.len() as f64 * lrd_q)
        })
    }
}
