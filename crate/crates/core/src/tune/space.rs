use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ml::{DetectorConfig, FlagRule, ModelKind, ParamValue};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Domain {
    Real { lo: f64, hi: f64 },
    Int { lo: i64, hi: i64 },
    Categorical(Vec<ParamValue>),
}

impl Domain {
    pub fn contains(&self, v: &ParamValue) -> bool {
        match (self, v) {
            (Domain::Real { lo, hi }, _) => v.as_f64().is_some_and(|x| x >= *lo && x <= *hi),
            (Domain::Int { lo, hi }, ParamValue::Int(x)) => x >= lo && x <= hi,
            (Domain::Categorical(c), _) => c.contains(v),
            _ => false,
        }
    }

    /// Number of points, or `None` for a continuous interval.
    pub fn cardinality(&self) -> Option<u64> {
        match self {
            Domain::Real { .. } => None,
            Domain::Int { lo, hi } => Some((hi - lo + 1) as u64),
            Domain::Categorical(c) => Some(c.len() as u64),
        }
    }

    fn nth(&self, i: u64) -> ParamValue {
        match self {
            Domain::Int { lo, .. } => ParamValue::Int(lo + i as i64),
            Domain::Categorical(c) => c[i as usize].clone(),
            Domain::Real { .. } => unreachable!("continuous domain"),
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        let ok = match self {
            Domain::Real { lo, hi } => lo < hi && lo.is_finite() && hi.is_finite(),
            Domain::Int { lo, hi } => lo < hi,
            Domain::Categorical(c) => !c.is_empty(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::param(name, format!("empty or inverted domain {self:?}")))
        }
    }
}

/// Hyperparameter domains for one model. Parameters listed in `fixed` are
/// copied into every proposal unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub model: ModelKind,
    pub detector_seed: u64,
    pub domains: BTreeMap<String, Domain>,
    #[serde(default)]
    pub fixed: BTreeMap<String, ParamValue>,
}

fn real(lo: f64, hi: f64) -> Domain {
    Domain::Real { lo, hi }
}

/// Integer interval, collapsing to a single choice when `hi <= lo`.
fn int(lo: i64, hi: i64) -> Domain {
    if hi > lo {
        Domain::Int { lo, hi }
    } else {
        Domain::Categorical(vec![ParamValue::Int(lo.min(hi.max(1)))])
    }
}

fn text(choices: &[&str]) -> Domain {
    Domain::Categorical(choices.iter().map(|s| ParamValue::Text(s.to_string())).collect())
}

impl SearchSpace {
    pub fn new(model: ModelKind, detector_seed: u64) -> Self {
        SearchSpace {
            model,
            detector_seed,
            domains: BTreeMap::new(),
            fixed: BTreeMap::new(),
        }
    }

    pub fn with(mut self, name: &str, domain: Domain) -> Self {
        self.domains.insert(name.to_string(), domain);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.domains.iter().try_for_each(|(k, d)| d.validate(k))
    }

    /// Default search space for `model` on a matrix of `n_rows × dim`.
    /// Neighbour counts stay below `n_rows`; contamination is searched only
    /// when it drives the flags.
    pub fn default_for(model: ModelKind, n_rows: usize, dim: usize, rule: FlagRule, detector_seed: u64) -> Self {
        let n = n_rows as i64;
        let s = SearchSpace::new(model, detector_seed);
        let s = match model {
            ModelKind::Iforest => s
                .with("n_estimators", int(50, 300))
                .with("max_samples", real(0.1, 1.0))
                .with("max_features", real(0.5, 1.0)),
            ModelKind::Knn => s
                .with("n_neighbors", int(1, 20.min(n - 1)))
                .with("method", text(&["largest", "mean", "median"]))
                .with("metric", text(&["euclidean", "manhattan", "minkowski", "mahalanobis"]))
                .with("p", real(1.0, 4.0)),
            ModelKind::Gmm => s
                .with("n_components", int(1, 5.min(n - 1)))
                .with("covariance_type", text(&["full", "tied", "diag", "spherical"]))
                .with("init_params", text(&["kmeans", "random"])),
            ModelKind::Lof => s
                .with("n_neighbors", int(2, 50.min(n - 1)))
                .with("metric", text(&["euclidean", "manhattan", "mahalanobis"])),
            ModelKind::Pca => s.with("n_components", int(1, dim as i64)),
            ModelKind::Autoencoder => s
                .with("epoch_num", int(10, 50))
                .with(
                    "batch_size",
                    Domain::Categorical([16, 32, 64].map(ParamValue::Int).to_vec()),
                )
                .with("dropout_rate", real(0.0, 0.3))
                .with(
                    "hidden_neuron_list",
                    Domain::Categorical(
                        [vec![8], vec![16], vec![8, 4], vec![16, 8], vec![32, 16]]
                            .map(ParamValue::List)
                            .to_vec(),
                    ),
                )
                .with("hidden_activation_name", text(&["relu", "tanh", "sigmoid"]))
                .with("optimizer_name", text(&["adam", "momentum", "sgd"])),
        };
        match (rule, model) {
            (FlagRule::Contamination, ModelKind::Iforest | ModelKind::Gmm) => {
                s.with("contamination", real(0.01, 0.5))
            }
            _ => s,
        }
    }

    /// Total number of points when every domain is finite.
    pub fn cardinality(&self) -> Option<u64> {
        self.domains
            .values()
            .try_fold(1u64, |acc, d| d.cardinality().and_then(|c| acc.checked_mul(c)))
    }

    /// All points, last parameter varying fastest.
    pub fn enumerate(&self) -> Option<Vec<DetectorConfig>> {
        let total = self.cardinality()?;
        let dims: Vec<(&String, &Domain, u64)> = self
            .domains
            .iter()
            .map(|(k, d)| (k, d, d.cardinality().unwrap_or(1)))
            .collect();
        Some(
            (0..total)
                .map(|mut i| {
                    let mut cfg = self.base_config();
                    for (k, d, c) in dims.iter().rev() {
                        cfg.params.insert((*k).clone(), d.nth(i % c));
                        i /= c;
                    }
                    cfg
                })
                .collect(),
        )
    }

    pub fn base_config(&self) -> DetectorConfig {
        let mut cfg = DetectorConfig::new(self.model, self.detector_seed);
        cfg.params.extend(self.fixed.clone());
        cfg
    }

    pub fn contains(&self, cfg: &DetectorConfig) -> bool {
        self.domains
            .iter()
            .all(|(k, d)| cfg.params.get(k).is_some_and(|v| d.contains(v)))
    }
}
