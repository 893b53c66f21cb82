//! Tree-structured Parzen estimator proposals.
//!
//! History is ranked by a random weighted Chebyshev scalarization of the
//! min-max normalized objectives (weights drawn from the proposal seed),
//! split at the γ-quantile into good and bad sets, and each set is modelled
//! per dimension: truncated Gaussian kernels with Scott bandwidth plus a
//! uniform prior component for intervals, smoothed counts for categories.
//! The candidate with the largest `l(x) / g(x)` among the ones drawn from
//! `l` is returned.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use super::space::{Domain, SearchSpace};
use super::TrialRecord;
use crate::ml::{DetectorConfig, ParamValue};

pub const GAMMA: f64 = 0.25;
pub const N_CANDIDATES: usize = 24;
/// Trials drawn uniformly before the density model takes over.
pub const N_STARTUP: usize = 10;

/// Uniform draw from every domain.
pub fn random_config(space: &SearchSpace, rng: &mut ChaCha8Rng) -> DetectorConfig {
    let mut cfg = space.base_config();
    for (k, d) in &space.domains {
        cfg.params.insert(k.clone(), sample_uniform(d, rng));
    }
    cfg
}

fn sample_uniform(d: &Domain, rng: &mut ChaCha8Rng) -> ParamValue {
    match d {
        Domain::Real { lo, hi } => ParamValue::Real(rng.random_range(*lo..=*hi)),
        Domain::Int { lo, hi } => ParamValue::Int(rng.random_range(*lo..=*hi)),
        Domain::Categorical(c) => c[rng.random_range(0..c.len())].clone(),
    }
}

/// Scalar cost per trial (lower is better); infeasible trials get `+∞`.
pub fn scalarize(history: &[TrialRecord], w: f64) -> Vec<f64> {
    let feasible: Vec<&TrialRecord> = history.iter().filter(|t| t.is_feasible()).collect();
    let dirs = history.first().map(|t| t.kind.maximize());
    let Some(dirs) = dirs else { return Vec::new() };
    let objs = |t: &TrialRecord| [t.objectives.0, t.objectives.1];
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for t in &feasible {
        for (j, v) in objs(t).into_iter().enumerate() {
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }
    let weights = [w, 1.0 - w];
    history
        .iter()
        .map(|t| {
            if !t.is_feasible() {
                return f64::INFINITY;
            }
            (0..2)
                .map(|j| {
                    let span = hi[j] - lo[j];
                    let v = objs(t)[j];
                    let cost = if span > 0.0 {
                        if dirs[j] {
                            (hi[j] - v) / span
                        } else {
                            (v - lo[j]) / span
                        }
                    } else {
                        0.0
                    };
                    weights[j] * cost
                })
                .fold(0.0, f64::max)
        })
        .collect()
}

/// Parzen model of one dimension.
enum Density {
    Interval {
        lo: f64,
        hi: f64,
        centers: Vec<f64>,
        bandwidth: f64,
        mass: Vec<f64>,
    },
    Counts(Vec<f64>),
}

fn numeric(v: &ParamValue) -> f64 {
    v.as_f64().unwrap_or(f64::NAN)
}

impl Density {
    fn fit(domain: &Domain, obs: &[&ParamValue]) -> Self {
        match domain {
            Domain::Categorical(c) => {
                let mut counts = vec![1.0; c.len()];
                for v in obs {
                    if let Some(i) = c.iter().position(|x| x == *v) {
                        counts[i] += 1.0;
                    }
                }
                let total: f64 = counts.iter().sum();
                Density::Counts(counts.into_iter().map(|x| x / total).collect())
            }
            Domain::Real { lo, hi } => Self::interval(*lo, *hi, obs),
            Domain::Int { lo, hi } => Self::interval(*lo as f64 - 0.5, *hi as f64 + 0.5, obs),
        }
    }

    fn interval(lo: f64, hi: f64, obs: &[&ParamValue]) -> Self {
        let centers: Vec<f64> = obs.iter().map(|v| numeric(v)).filter(|x| x.is_finite()).collect();
        let width = hi - lo;
        let n = centers.len() as f64;
        let sd = if centers.len() > 1 {
            crate::stats::sample_std(&centers)
        } else {
            0.0
        };
        // Scott's rule, floored so a concentrated set keeps exploring
        let floor = width / (n + 1.0).min(100.0);
        let bandwidth = (sd * n.powf(-0.2)).clamp(floor, width);
        let unit = Normal::standard();
        let mass = centers
            .iter()
            .map(|&c| {
                (unit.cdf((hi - c) / bandwidth) - unit.cdf((lo - c) / bandwidth)).max(1e-12)
            })
            .collect();
        Density::Interval {
            lo,
            hi,
            centers,
            bandwidth,
            mass,
        }
    }

    fn log_pdf(&self, domain: &Domain, v: &ParamValue) -> f64 {
        match self {
            Density::Counts(p) => match domain {
                Domain::Categorical(c) => c.iter().position(|x| x == v).map_or(f64::NEG_INFINITY, |i| p[i].ln()),
                _ => f64::NEG_INFINITY,
            },
            Density::Interval {
                lo,
                hi,
                centers,
                bandwidth,
                mass,
            } => {
                let x = numeric(v);
                let prior = 1.0 / (hi - lo);
                let norm = (2.0 * std::f64::consts::PI).sqrt() * bandwidth;
                let kern: f64 = centers
                    .iter()
                    .zip(mass)
                    .map(|(c, m)| (-0.5 * ((x - c) / bandwidth).powi(2)).exp() / (norm * m))
                    .sum();
                ((kern + prior) / (centers.len() as f64 + 1.0)).ln()
            }
        }
    }

    fn sample(&self, domain: &Domain, rng: &mut ChaCha8Rng) -> ParamValue {
        match (self, domain) {
            (Density::Counts(p), Domain::Categorical(c)) => {
                let mut u: f64 = rng.random();
                for (i, pi) in p.iter().enumerate() {
                    u -= pi;
                    if u < 0.0 {
                        return c[i].clone();
                    }
                }
                c[c.len() - 1].clone()
            }
            (
                Density::Interval {
                    lo,
                    hi,
                    centers,
                    bandwidth,
                    ..
                },
                _,
            ) => {
                let pick = rng.random_range(0..=centers.len());
                let x = if pick == centers.len() {
                    rng.random_range(*lo..*hi)
                } else {
                    let c = centers[pick];
                    let mut x = c;
                    // rejection sampling of the truncated kernel
                    for _ in 0..64 {
                        let z: f64 = rng.sample(rand_distr::StandardNormal);
                        x = c + bandwidth * z;
                        if x >= *lo && x <= *hi {
                            break;
                        }
                    }
                    x.clamp(*lo, *hi)
                };
                match domain {
                    Domain::Int { lo, hi } => ParamValue::Int((x.round() as i64).clamp(*lo, *hi)),
                    _ => ParamValue::Real(x),
                }
            }
            (Density::Counts(_), _) => unreachable!("count density on an interval"),
        }
    }
}

/// Proposes the next configuration given the trial history. `seed` should
/// already be specific to the trial being proposed.
pub fn tpe_propose(history: &[TrialRecord], space: &SearchSpace, seed: u64) -> DetectorConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if history.len() < N_STARTUP {
        return random_config(space, &mut rng);
    }
    let w: f64 = rng.random();
    let cost = scalarize(history, w);
    let mut order: Vec<usize> = (0..history.len()).collect();
    order.sort_by(|&a, &b| cost[a].total_cmp(&cost[b]).then(history[a].trial_id.cmp(&history[b].trial_id)));
    let n_good = ((GAMMA * history.len() as f64).ceil() as usize).clamp(1, history.len() - 1);
    let (good, bad) = order.split_at(n_good);

    let models: Vec<(&String, &Domain, Density, Density)> = space
        .domains
        .iter()
        .map(|(k, d)| {
            let obs = |idx: &[usize]| -> Vec<&ParamValue> {
                idx.iter().filter_map(|&i| history[i].config.params.get(k)).collect()
            };
            (k, d, Density::fit(d, &obs(good)), Density::fit(d, &obs(bad)))
        })
        .collect();

    let mut best: Option<(f64, DetectorConfig)> = None;
    for _ in 0..N_CANDIDATES {
        let mut cfg = space.base_config();
        let mut ratio = 0.0;
        for (k, d, l, g) in &models {
            let v = l.sample(d, &mut rng);
            ratio += l.log_pdf(d, &v) - g.log_pdf(d, &v);
            cfg.params.insert((*k).clone(), v);
        }
        if best.as_ref().is_none_or(|(r, _)| ratio > *r) {
            best = Some((ratio, cfg));
        }
    }
    best.map_or_else(|| space.base_config(), |(_, c)| c)
}
