//! Gaussian mixture fitted by expectation-maximization.
//!
//! Each iteration runs the E-step (which also yields the mean training
//! log-likelihood), checks convergence, then runs the M-step. Every
//! covariance gets a small ridge on its diagonal so that a component
//! holding a single point cannot collapse. An iteration that lowers the
//! log-likelihood is discarded and ends the fit. Stopping
//! before the M-step means the returned parameters are exactly the ones
//! that produced the last entry of `history`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::DetectorConfig;
use crate::error::{Error, Result};
use crate::stats;

pub const TOLERANCE: f64 = 1e-6;
pub const MAX_ITER: usize = 200;
const REG_SCALE: f64 = 1e-6;
const KMEANS_ITER: usize = 20;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceType {
    Full,
    Tied,
    Diag,
    Spherical,
}

impl CovarianceType {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(CovarianceType::Full),
            "tied" => Ok(CovarianceType::Tied),
            "diag" => Ok(CovarianceType::Diag),
            "spherical" => Ok(CovarianceType::Spherical),
            other => Err(Error::param("covariance_type", format!("unknown type `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitParams {
    Kmeans,
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmParams {
    pub n_components: usize,
    pub covariance_type: CovarianceType,
    pub contamination: f64,
    pub init_params: InitParams,
}

impl GmmParams {
    pub fn from_config(cfg: &DetectorConfig) -> Result<Self> {
        let init_params = match cfg.text("init_params", "kmeans")? {
            "kmeans" => InitParams::Kmeans,
            "random" => InitParams::Random,
            other => return Err(Error::param("init_params", format!("unknown init `{other}`"))),
        };
        Ok(GmmParams {
            n_components: cfg.count("n_components", 1)?,
            covariance_type: CovarianceType::parse(cfg.text("covariance_type", "full")?)?,
            contamination: cfg.contamination()?,
            init_params,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub covariance: DMatrix<f64>,
    chol: DMatrix<f64>,
    log_det: f64,
}

impl Component {
    fn log_pdf(&self, x: &[f64]) -> f64 {
        let d = x.len();
        // forward substitution L z = x - mu
        let mut z = vec![0.0; d];
        for i in 0..d {
            let mut s = x[i] - self.mean[i];
            for j in 0..i {
                s -= self.chol[(i, j)] * z[j];
            }
            z[i] = s / self.chol[(i, i)];
        }
        let q: f64 = z.iter().map(|v| v * v).sum();
        -0.5 * (d as f64 * LN_2PI + self.log_det + q)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    pub components: Vec<Component>,
    /// Mean training log-likelihood per EM iteration.
    pub history: Vec<f64>,
    pub converged: bool,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Lower Cholesky factor if the matrix is well-conditioned enough.
fn factor(c: &DMatrix<f64>) -> Option<(DMatrix<f64>, f64)> {
    let l = c.clone().cholesky()?.l();
    let diag: Vec<f64> = (0..l.nrows()).map(|i| l[(i, i)] * l[(i, i)]).collect();
    let (lo, hi) = stats::min_max(&diag);
    if !(lo > 1e-12 * hi) {
        return None;
    }
    let log_det = diag.iter().map(|v| v.ln()).sum();
    Some((l, log_det))
}

fn kmeans_responsibilities(rows: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = rows.len();
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut centers = vec![rows[rng.random_range(0..n)].clone()];
    while centers.len() < k {
        let d2: Vec<f64> = rows
            .iter()
            .map(|r| centers.iter().map(|c| sq(r, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            d2.iter()
                .position(|&w| {
                    u -= w;
                    u < 0.0
                })
                .unwrap_or(n - 1)
        } else {
            rng.random_range(0..n)
        };
        centers.push(rows[pick].clone());
    }
    let mut assign = vec![0usize; n];
    for _ in 0..KMEANS_ITER {
        let next: Vec<usize> = rows
            .iter()
            .map(|r| {
                let d: Vec<f64> = centers.iter().map(|c| sq(r, c)).collect();
                d.iter()
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(b.1))
                    .map_or(0, |(j, _)| j)
            })
            .collect();
        let changed = next != assign;
        assign = next;
        for (j, c) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = rows.iter().zip(&assign).filter(|(_, &a)| a == j).map(|(r, _)| r).collect();
            if !members.is_empty() {
                for (t, v) in c.iter_mut().enumerate() {
                    *v = members.iter().map(|m| m[t]).sum::<f64>() / members.len() as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }
    assign
        .iter()
        .map(|&a| (0..k).map(|j| f64::from(u8::from(j == a))).collect())
        .collect()
}

fn random_responsibilities(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let r: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
            let s: f64 = r.iter().sum();
            r.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

struct Fitter<'a> {
    rows: &'a [Vec<f64>],
    kind: CovarianceType,
    reg: f64,
}

impl Fitter<'_> {
    fn m_step(&self, resp: &[Vec<f64>]) -> Result<Vec<Component>> {
        let d = self.rows[0].len();
        let k = resp[0].len();
        let n = self.rows.len() as f64;
        let nk: Vec<f64> = (0..k).map(|j| resp.iter().map(|r| r[j]).sum()).collect();
        let total: f64 = nk.iter().sum();
        let mut means = Vec::with_capacity(k);
        let mut covs = Vec::with_capacity(k);
        for j in 0..k {
            if !(nk[j] > 1e-12 * n) {
                return Err(Error::SingularComponent(j));
            }
            let mut mu = vec![0.0; d];
            for (x, r) in self.rows.iter().zip(resp) {
                for t in 0..d {
                    mu[t] += r[j] * x[t];
                }
            }
            mu.iter_mut().for_each(|v| *v /= nk[j]);
            let mut c = DMatrix::zeros(d, d);
            for (x, r) in self.rows.iter().zip(resp) {
                for a in 0..d {
                    let da = x[a] - mu[a];
                    for b in 0..d {
                        c[(a, b)] += r[j] * da * (x[b] - mu[b]);
                    }
                }
            }
            means.push(mu);
            covs.push(c);
        }
        match self.kind {
            CovarianceType::Full => {
                for (c, &w) in covs.iter_mut().zip(&nk) {
                    *c /= w;
                }
            }
            CovarianceType::Tied => {
                let shared = covs.iter().fold(DMatrix::zeros(d, d), |acc, c| acc + c) / total;
                covs.iter_mut().for_each(|c| *c = shared.clone());
            }
            CovarianceType::Diag | CovarianceType::Spherical => {
                for (c, &w) in covs.iter_mut().zip(&nk) {
                    let diag: Vec<f64> = (0..d).map(|a| c[(a, a)] / w).collect();
                    let avg = stats::mean(&diag);
                    *c = DMatrix::from_fn(d, d, |a, b| match (a == b, self.kind) {
                        (false, _) => 0.0,
                        (true, CovarianceType::Spherical) => avg,
                        (true, _) => diag[a],
                    });
                }
            }
        }
        covs.into_iter()
            .zip(means)
            .zip(&nk)
            .enumerate()
            .map(|(j, ((mut cov, mean), &w))| {
                for a in 0..d {
                    cov[(a, a)] += self.reg;
                }
                let (chol, log_det) = factor(&cov).ok_or(Error::SingularComponent(j))?;
                Ok(Component {
                    weight: w / total,
                    mean,
                    covariance: cov,
                    chol,
                    log_det,
                })
            })
            .collect()
    }

    /// Responsibilities and mean log-likelihood.
    fn e_step(&self, comps: &[Component]) -> (Vec<Vec<f64>>, f64) {
        let mut ll = 0.0;
        let resp = self
            .rows
            .iter()
            .map(|x| {
                let lp: Vec<f64> = comps.iter().map(|c| c.weight.ln() + c.log_pdf(x)).collect();
                let lse = log_sum_exp(&lp);
                ll += lse;
                lp.into_iter().map(|v| (v - lse).exp()).collect()
            })
            .collect();
        (resp, ll / self.rows.len() as f64)
    }
}

impl GaussianMixture {
    pub fn fit(params: &GmmParams, rows: &[Vec<f64>], seed: u64) -> Result<Self> {
        let k = params.n_components;
        if rows.len() < k.max(2) {
            return Err(Error::InsufficientData(format!(
                "{k} mixture components need at least {} rows, got {}",
                k.max(2),
                rows.len()
            )));
        }
        let d = rows[0].len();
        let col_var = (0..d)
            .map(|j| {
                let c: Vec<f64> = rows.iter().map(|r| r[j]).collect();
                stats::sample_std(&c).powi(2)
            })
            .sum::<f64>()
            / d as f64;
        let fitter = Fitter {
            rows,
            kind: params.covariance_type,
            reg: REG_SCALE * col_var,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let resp = match params.init_params {
            InitParams::Kmeans => kmeans_responsibilities(rows, k, &mut rng),
            InitParams::Random => random_responsibilities(rows.len(), k, &mut rng),
        };
        let mut components = fitter.m_step(&resp)?;
        let mut history: Vec<f64> = Vec::new();
        let mut converged = false;
        let mut previous: Option<Vec<Component>> = None;
        loop {
            let (resp, ll) = fitter.e_step(&components);
            let gain = history.last().map(|&prev| ll - prev);
            if gain.is_some_and(|g| g < 0.0) {
                // the ridge makes the M-step inexact; keep the better state
                components = previous.take().unwrap_or(components);
                converged = true;
                break;
            }
            history.push(ll);
            if gain.is_some_and(|g| g < TOLERANCE) {
                converged = true;
                break;
            }
            if history.len() >= MAX_ITER {
                break;
            }
            let next = fitter.m_step(&resp)?;
            previous = Some(std::mem::replace(&mut components, next));
        }
        Ok(GaussianMixture {
            components,
            history,
            converged,
        })
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let lp: Vec<f64> = self
            .components
            .iter()
            .map(|c| c.weight.ln() + c.log_pdf(x))
            .collect();
        log_sum_exp(&lp)
    }

    /// Negative log density.
    pub fn score(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        rows.iter().map(|r| -self.log_density(r)).collect()
    }
}
