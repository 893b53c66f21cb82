//! k-nearest-neighbour distance detector and the neighbour search shared
//! with LOF.
//!
//! A query that coincides exactly with a training row does not count that
//! row as its own neighbour (one copy is skipped). Scoring the training set
//! therefore gives leave-one-out scores, and the same rule applies to grid
//! nodes.

use super::DetectorConfig;
use crate::dist_detect::{distance, MetricSpec};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnnMethod {
    Largest,
    Mean,
    Median,
}

impl KnnMethod {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "largest" => Ok(KnnMethod::Largest),
            "mean" => Ok(KnnMethod::Mean),
            "median" => Ok(KnnMethod::Median),
            other => Err(Error::param("method", format!("unknown KNN method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnParams {
    pub n_neighbors: usize,
    pub method: KnnMethod,
    pub metric: MetricSpec,
}

impl KnnParams {
    pub fn from_config(cfg: &DetectorConfig) -> Result<Self> {
        Ok(KnnParams {
            n_neighbors: cfg.count("n_neighbors", 5)?,
            method: KnnMethod::parse(cfg.text("method", "largest")?)?,
            metric: cfg.metric()?,
        })
    }
}

/// The `k` nearest training rows of `query` as `(index, distance)`, ordered
/// by distance then index.
pub fn nearest(
    train: &[Vec<f64>],
    query: &[f64],
    k: usize,
    metric: &MetricSpec,
) -> Vec<(usize, f64)> {
    let mut skipped = false;
    let mut all: Vec<(usize, f64)> = Vec::with_capacity(train.len());
    for (i, r) in train.iter().enumerate() {
        if !skipped && r.as_slice() == query {
            skipped = true;
            continue;
        }
        all.push((i, distance(r, query, metric).unwrap_or(f64::INFINITY)));
    }
    let by = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, by);
        all.truncate(k);
    }
    all.sort_by(by);
    all
}

pub(crate) fn check_k(k: usize, n: usize) -> Result<()> {
    if k >= n {
        return Err(Error::NeighborCount { k, n });
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct KnnModel {
    params: KnnParams,
    train: Vec<Vec<f64>>,
}

impl KnnModel {
    pub fn fit(params: KnnParams, rows: &[Vec<f64>]) -> Result<Self> {
        check_k(params.n_neighbors, rows.len())?;
        let metric = params.metric.resolve(rows)?;
        Ok(KnnModel {
            params: KnnParams { metric, ..params },
            train: rows.to_vec(),
        })
    }

    pub fn score(&self, rows: &[Vec<f64>], exec: Exec) -> Vec<f64> {
        exec.map_slice(rows, |q| {
            let d: Vec<f64> = nearest(&self.train, q, self.params.n_neighbors, &self.params.metric)
                .into_iter()
                .map(|(_, d)| d)
                .collect();
            match self.params.method {
                KnnMethod::Largest => d.last().copied().unwrap_or(0.0),
                KnnMethod::Mean => stats::mean(&d),
                KnnMethod::Median => stats::median(&d),
            }
        })
    }
}
