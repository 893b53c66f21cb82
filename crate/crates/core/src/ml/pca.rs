//! PCA reconstruction error.
//!
//! Components are the leading eigenvectors of the sample covariance; the
//! score of a row is the squared norm of its residual after projecting the
//! centred row onto the retained subspace.

use nalgebra::SymmetricEigen;

use super::DetectorConfig;
use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaParams {
    pub n_components: usize,
}

impl PcaParams {
    /// Defaults to `dim - 1` components (at least one).
    pub fn from_config(cfg: &DetectorConfig, dim: usize) -> Result<Self> {
        let n_components = cfg.count("n_components", dim.saturating_sub(1).max(1) as i64)?;
        if n_components > dim {
            return Err(Error::Shape(format!(
                "n_components {n_components} exceeds feature dimension {dim}"
            )));
        }
        Ok(PcaParams { n_components })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Unit principal directions, by decreasing explained variance.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn fit(params: &PcaParams, rows: &[Vec<f64>]) -> Result<Self> {
        let mean = linalg::column_means(rows);
        let eig = SymmetricEigen::new(linalg::sample_covariance(rows));
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let keep = &order[..params.n_components];
        Ok(PcaModel {
            mean,
            components: keep
                .iter()
                .map(|&j| eig.eigenvectors.column(j).iter().copied().collect())
                .collect(),
            explained_variance: keep.iter().map(|&j| eig.eigenvalues[j]).collect(),
        })
    }

    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        let mut r: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        let centred = r.clone();
        for v in &self.components {
            let proj: f64 = centred.iter().zip(v).map(|(a, b)| a * b).sum();
            for (ri, vi) in r.iter_mut().zip(v) {
                *ri -= proj * vi;
            }
        }
        r
    }

    pub fn score(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        rows.iter()
            .map(|x| self.residual(x).iter().map(|v| v * v).sum())
            .collect()
    }
}
