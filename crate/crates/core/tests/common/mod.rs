//! Brute-force reference implementations shared by the integration tests.
//! None of these call into the library's numerics.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

/// Linear-interpolation quantile computed from positions `1..=n`.
pub fn quantile7(values: &[f64], p: f64) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = 1.0 + (s.len() as f64 - 1.0) * p;
    let j = pos.floor() as usize;
    let g = pos - j as f64;
    if j >= s.len() {
        return s[s.len() - 1];
    }
    (1.0 - g) * s[j - 1] + g * s[j]
}

pub fn median(values: &[f64]) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn std_bessel(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

pub fn scaled_mad(v: &[f64], factor: f64) -> (f64, f64) {
    let m = median(v);
    let dev: Vec<f64> = v.iter().map(|x| (x - m).abs()).collect();
    (m, factor * median(&dev))
}

pub fn median_iqr_oracle(v: &[f64]) -> Vec<f64> {
    let m = median(v);
    let iqr = quantile7(v, 0.75) - quantile7(v, 0.25);
    v.iter().map(|x| x - m * m / iqr).collect()
}

/// Flags of the five univariate rules with default limits.
pub fn stat_oracle(v: &[f64], method: &str) -> Vec<bool> {
    match method {
        "sd" | "zscore" => {
            let (m, s) = (mean(v), std_bessel(v));
            v.iter().map(|x| (x - m).abs() > 3.0 * s).collect()
        }
        "mad" => {
            let (m, s) = scaled_mad(v, 1.4826);
            v.iter().map(|x| (x - m).abs() > 3.0 * s).collect()
        }
        "mod_zscore" => {
            let (m, s) = scaled_mad(v, 1.4826);
            v.iter().map(|x| (x - m).abs() > 3.5 * s).collect()
        }
        "iqr" => {
            let (q1, q3) = (quantile7(v, 0.25), quantile7(v, 0.75));
            let w = 1.5 * (q3 - q1);
            v.iter().map(|&x| x < q1 - w || x > q3 + w).collect()
        }
        other => panic!("no oracle for {other}"),
    }
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// All other rows sorted by (distance, index).
fn neighbours(rows: &[Vec<f64>], i: usize) -> Vec<(usize, f64)> {
    let mut d: Vec<(usize, f64)> = (0..rows.len())
        .filter(|&j| j != i)
        .map(|j| (j, euclid(&rows[i], &rows[j])))
        .collect();
    d.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    d
}

pub fn knn_oracle(rows: &[Vec<f64>], k: usize, method: &str) -> Vec<f64> {
    (0..rows.len())
        .map(|i| {
            let d: Vec<f64> = neighbours(rows, i).into_iter().take(k).map(|x| x.1).collect();
            match method {
                "largest" => d[k - 1],
                "mean" => mean(&d),
                _ => median(&d),
            }
        })
        .collect()
}

/// Local outlier factor of every training row.
pub fn lof_oracle(rows: &[Vec<f64>], k: usize) -> Vec<f64> {
    let n = rows.len();
    let nb: Vec<Vec<(usize, f64)>> = (0..n).map(|i| neighbours(rows, i).into_iter().take(k).collect()).collect();
    let kdist: Vec<f64> = nb.iter().map(|v| v[k - 1].1).collect();
    let lrd: Vec<f64> = (0..n)
        .map(|i| {
            let reach: f64 = nb[i].iter().map(|&(o, d)| d.max(kdist[o])).sum();
            k as f64 / reach
        })
        .collect();
    (0..n)
        .map(|i| nb[i].iter().map(|&(o, _)| lrd[o]).sum::<f64>() / (k as f64 * lrd[i]))
        .collect()
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix; returns
/// eigenpairs sorted by descending eigenvalue.
pub fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> Vec<(f64, Vec<f64>)> {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j].powi(2)).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut pairs: Vec<(f64, Vec<f64>)> = (0..n).map(|j| (a[j][j], v.iter().map(|r| r[j]).collect())).collect();
    pairs.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap());
    pairs
}

pub fn covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mu: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    (0..d)
        .map(|a| {
            (0..d)
                .map(|b| rows.iter().map(|r| (r[a] - mu[a]) * (r[b] - mu[b])).sum::<f64>() / (n - 1.0))
                .collect()
        })
        .collect()
}

/// Squared residual after projecting onto the top `k` principal directions.
pub fn pca_residual_oracle(rows: &[Vec<f64>], k: usize) -> Vec<f64> {
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mu: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let eig = jacobi_eigen(covariance(rows));
    rows.iter()
        .map(|x| {
            let c: Vec<f64> = x.iter().zip(&mu).map(|(a, m)| a - m).collect();
            let total: f64 = c.iter().map(|v| v * v).sum();
            let kept: f64 = eig[..k]
                .iter()
                .map(|(_, v)| c.iter().zip(v).map(|(a, b)| a * b).sum::<f64>().powi(2))
                .sum();
            total - kept
        })
        .collect()
}

/// Gaussian log-density through a hand-rolled Cholesky factorization.
pub fn gaussian_log_pdf(x: &[f64], mean: &[f64], cov: &[Vec<f64>]) -> f64 {
    let d = x.len();
    let mut l = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                l[i][i] = (cov[i][i] - s).sqrt();
            } else {
                l[i][j] = (cov[i][j] - s) / l[j][j];
            }
        }
    }
    let mut z = vec![0.0; d];
    for i in 0..d {
        let s: f64 = (0..i).map(|k| l[i][k] * z[k]).sum();
        z[i] = (x[i] - mean[i] - s) / l[i][i];
    }
    let log_det: f64 = (0..d).map(|i| 2.0 * l[i][i].ln()).sum();
    -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + z.iter().map(|v| v * v).sum::<f64>())
}

pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mcc: f64,
}

pub fn metrics_oracle(tp: u64, tn: u64, fp: u64, fn_: u64) -> Metrics {
    let (tp, tn, fp, fn_) = (tp as f64, tn as f64, fp as f64, fn_ as f64);
    let precision = if tp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let recall = if tp > 0.0 { tp / (tp + fn_) } else { 0.0 };
    let f1 = if tp > 0.0 { 2.0 * tp / (2.0 * tp + fp + fn_) } else { 0.0 };
    let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    Metrics {
        accuracy: (tp + tn) / (tp + tn + fp + fn_),
        precision,
        recall,
        f1,
        mcc: if denom > 0.0 { (tp * tn - fp * fn_) / denom.sqrt() } else { 0.0 },
    }
}

/// Non-dominated indices by pairwise comparison.
pub fn front_oracle(objs: &[(f64, f64)], maximize: [bool; 2]) -> Vec<usize> {
    let sign = |m: bool| if m { 1.0 } else { -1.0 };
    let v: Vec<(f64, f64)> = objs.iter().map(|o| (o.0 * sign(maximize[0]), o.1 * sign(maximize[1]))).collect();
    (0..v.len())
        .filter(|&i| {
            !(0..v.len()).any(|j| v[j].0 >= v[i].0 && v[j].1 >= v[i].1 && (v[j].0 > v[i].0 || v[j].1 > v[i].1))
        })
        .collect()
}

/// Cluster stretched along the first axis and tight along the others, plus
/// one far point (appended last) beyond the end of the long axis and off it,
/// so that it is extreme for subspace models too.
pub fn blob_with_extreme(seed: u64, n: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    let mut rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..dim)
                .map(|j| r.random_range(-1.0..1.0) * if j == 0 { 3.0 } else { 0.05 })
                .collect()
        })
        .collect();
    rows.push((0..dim).map(|j| [4.0, 2.0].get(j).copied().unwrap_or(0.0)).collect());
    rows
}
