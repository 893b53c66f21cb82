//! Unsupervised detectors behind a single fit/score interface, plus the
//! min-max probability layer shared by all of them.
//!
//! Raw scores are oriented so that larger means more anomalous for every
//! model, which is what allows one normalization and one threshold to be
//! applied across models.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dist_detect::MetricSpec;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::stats;

pub mod autoencoder;
pub mod gmm;
pub mod iforest;
pub mod knn;
pub mod lof;
pub mod pca;

/// Probability cut used when no other rule is requested.
pub const DEFAULT_THRESHOLD: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Iforest,
    Knn,
    Gmm,
    Lof,
    Pca,
    Autoencoder,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Iforest,
        ModelKind::Knn,
        ModelKind::Gmm,
        ModelKind::Lof,
        ModelKind::Pca,
        ModelKind::Autoencoder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Iforest => "iforest",
            ModelKind::Knn => "knn",
            ModelKind::Gmm => "gmm",
            ModelKind::Lof => "lof",
            ModelKind::Pca => "pca",
            ModelKind::Autoencoder => "autoencoder",
        }
    }

    pub fn id(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::param("model", format!("unknown model `{s}`")))
    }
}

/// A hyperparameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Real(f64),
    Text(String),
    List(Vec<i64>),
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Int(v) => write!(f, "{v}"),
            ParamValue::Real(v) => write!(f, "{v}"),
            ParamValue::Text(v) => f.write_str(v),
            ParamValue::List(v) => {
                let parts: Vec<String> = v.iter().map(i64::to_string).collect();
                write!(f, "[{}]", parts.join(" "))
            }
        }
    }
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            ParamValue::Int(v) => Some(v as f64),
            ParamValue::Real(v) => Some(v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub model: ModelKind,
    #[serde(default)]
    pub params: BTreeMap<String, ParamValue>,
    #[serde(default)]
    pub seed: u64,
}

impl DetectorConfig {
    pub fn new(model: ModelKind, seed: u64) -> Self {
        DetectorConfig {
            model,
            params: BTreeMap::new(),
            seed,
        }
    }

    pub fn with(mut self, name: &str, value: ParamValue) -> Self {
        self.params.insert(name.to_string(), value);
        self
    }

    pub fn real(&self, name: &str, default: f64) -> Result<f64> {
        match self.params.get(name) {
            None => Ok(default),
            Some(v) => v
                .as_f64()
                .ok_or_else(|| Error::param(name, format!("expected a number, got {v}"))),
        }
    }

    pub fn int(&self, name: &str, default: i64) -> Result<i64> {
        match self.params.get(name) {
            None => Ok(default),
            Some(ParamValue::Int(v)) => Ok(*v),
            Some(ParamValue::Real(v)) if v.fract() == 0.0 => Ok(*v as i64),
            Some(v) => Err(Error::param(name, format!("expected an integer, got {v}"))),
        }
    }

    pub fn text<'a>(&'a self, name: &str, default: &'a str) -> Result<&'a str> {
        match self.params.get(name) {
            None => Ok(default),
            Some(ParamValue::Text(s)) => Ok(s),
            Some(v) => Err(Error::param(name, format!("expected text, got {v}"))),
        }
    }

    pub fn list(&self, name: &str, default: &[i64]) -> Result<Vec<i64>> {
        match self.params.get(name) {
            None => Ok(default.to_vec()),
            Some(ParamValue::List(v)) => Ok(v.clone()),
            Some(ParamValue::Int(v)) => Ok(vec![*v]),
            Some(v) => Err(Error::param(name, format!("expected a list, got {v}"))),
        }
    }

    /// Positive integer parameter.
    pub(crate) fn count(&self, name: &str, default: i64) -> Result<usize> {
        let v = self.int(name, default)?;
        if v < 1 {
            return Err(Error::param(name, format!("must be at least 1, got {v}")));
        }
        Ok(v as usize)
    }

    pub(crate) fn ranged(&self, name: &str, default: f64, lo: f64, hi: f64, open_lo: bool) -> Result<f64> {
        let v = self.real(name, default)?;
        let ok = if open_lo { v > lo } else { v >= lo } && v <= hi;
        if !ok {
            let bracket = if open_lo { "(" } else { "[" };
            return Err(Error::param(name, format!("{v} outside {bracket}{lo}, {hi}]")));
        }
        Ok(v)
    }

    pub(crate) fn metric(&self) -> Result<MetricSpec> {
        MetricSpec::parse(self.text("metric", "euclidean")?, self.real("p", 2.0)?)
    }

    /// Fraction used by the contamination flagging rule.
    pub fn contamination(&self) -> Result<f64> {
        self.ranged("contamination", 0.1, 0.0, 0.5, false)
    }

    /// Checks every parameter the model reads.
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self.model {
            ModelKind::Iforest => iforest::IForestParams::from_config(self).map(drop),
            ModelKind::Knn => knn::KnnParams::from_config(self).map(drop),
            ModelKind::Gmm => gmm::GmmParams::from_config(self).map(drop),
            ModelKind::Lof => lof::LofParams::from_config(self).map(drop),
            ModelKind::Pca => pca::PcaParams::from_config(self, dim).map(drop),
            ModelKind::Autoencoder => autoencoder::AeParams::from_config(self).map(drop),
        }
    }
}

#[derive(Debug, Clone)]
enum State {
    Iforest(iforest::IsolationForest),
    Knn(knn::KnnModel),
    Gmm(gmm::GaussianMixture),
    Lof(lof::LofModel),
    Pca(pca::PcaModel),
    Autoencoder(autoencoder::AeModel),
}

/// Immutable fitted detector; safe to share across scoring threads.
#[derive(Debug, Clone)]
pub struct FittedDetector {
    pub config: DetectorConfig,
    pub feature_bounds: Vec<(f64, f64)>,
    state: State,
}

fn check_matrix(rows: &[Vec<f64>]) -> Result<usize> {
    let d = rows.first().map_or(0, Vec::len);
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("rows must be non-empty and share a dimension".into()));
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Range("features contain non-finite values".into()));
    }
    Ok(d)
}

pub fn fit(config: &DetectorConfig, rows: &[Vec<f64>], exec: Exec) -> Result<FittedDetector> {
    let dim = check_matrix(rows)?;
    if rows.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} needs at least 3 rows, got {}",
            config.model,
            rows.len()
        )));
    }
    let feature_bounds = (0..dim)
        .map(|j| {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            stats::min_max(&col)
        })
        .collect();
    let state = match config.model {
        ModelKind::Iforest => State::Iforest(iforest::IsolationForest::fit(
            &iforest::IForestParams::from_config(config)?,
            rows,
            config.seed,
            exec,
        )?),
        ModelKind::Knn => State::Knn(knn::KnnModel::fit(
            knn::KnnParams::from_config(config)?,
            rows,
        )?),
        ModelKind::Gmm => State::Gmm(gmm::GaussianMixture::fit(
            &gmm::GmmParams::from_config(config)?,
            rows,
            config.seed,
        )?),
        ModelKind::Lof => State::Lof(lof::LofModel::fit(
            lof::LofParams::from_config(config)?,
            rows,
            exec,
        )?),
        ModelKind::Pca => State::Pca(pca::PcaModel::fit(
            &pca::PcaParams::from_config(config, dim)?,
            rows,
        )?),
        ModelKind::Autoencoder => State::Autoencoder(autoencoder::AeModel::fit(
            &autoencoder::AeParams::from_config(config)?,
            rows,
            config.seed,
        )?),
    };
    Ok(FittedDetector {
        config: config.clone(),
        feature_bounds,
        state,
    })
}

impl FittedDetector {
    pub fn dim(&self) -> usize {
        self.feature_bounds.len()
    }

    /// Raw anomaly scores, larger = more anomalous.
    pub fn score(&self, rows: &[Vec<f64>], exec: Exec) -> Result<Vec<f64>> {
        let d = check_matrix(rows)?;
        if d != self.dim() {
            return Err(Error::Shape(format!(
                "detector was fit on {} columns, got {d}",
                self.dim()
            )));
        }
        Ok(match &self.state {
            State::Iforest(m) => m.score(rows, exec),
            State::Knn(m) => m.score(rows, exec),
            State::Gmm(m) => m.score(rows),
            State::Lof(m) => m.score(rows, exec),
            State::Pca(m) => m.score(rows),
            State::Autoencoder(m) => m.score(rows),
        })
    }

    pub fn gmm(&self) -> Option<&gmm::GaussianMixture> {
        match &self.state {
            State::Gmm(m) => Some(m),
            _ => None,
        }
    }

    pub fn pca(&self) -> Option<&pca::PcaModel> {
        match &self.state {
            State::Pca(m) => Some(m),
            _ => None,
        }
    }

    pub fn iforest(&self) -> Option<&iforest::IsolationForest> {
        match &self.state {
            State::Iforest(m) => Some(m),
            _ => None,
        }
    }
}

/// `(x - min) / (max - min)`; constant input maps to zeros.
pub fn normalize_scores(raw: &[f64]) -> Vec<f64> {
    if raw.is_empty() {
        return Vec::new();
    }
    ScoreScaler::fit(raw).apply(raw)
}

/// Min-max scaler, either fit on the scored set or frozen from a reference
/// set. Values outside the reference range are clamped into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreScaler {
    pub min: f64,
    pub max: f64,
}

impl ScoreScaler {
    pub fn fit(reference: &[f64]) -> Self {
        let (min, max) = stats::min_max(reference);
        ScoreScaler { min, max }
    }

    pub fn apply_one(&self, x: f64) -> f64 {
        let span = self.max - self.min;
        if span > 0.0 {
            ((x - self.min) / span).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }

    pub fn apply(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter().map(|&x| self.apply_one(x)).collect()
    }
}

/// `probability > threshold`.
pub fn predict_outliers(probabilities: &[f64], threshold: f64) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Range(format!("threshold {threshold} outside [0, 1]")));
    }
    Ok(probabilities.iter().map(|&p| p > threshold).collect())
}

/// How binary flags are derived from scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FlagRule {
    /// Min-max probability above a fixed cut.
    Probability(f64),
    /// Raw scores above the `1 - contamination` quantile, with the fraction
    /// taken from the detector's `contamination` parameter.
    Contamination,
}

impl Default for FlagRule {
    fn default() -> Self {
        FlagRule::Probability(DEFAULT_THRESHOLD)
    }
}

impl FlagRule {
    pub fn apply(&self, config: &DetectorConfig, raw: &[f64], probabilities: &[f64]) -> Result<(Vec<bool>, f64)> {
        match *self {
            FlagRule::Probability(t) => Ok((predict_outliers(probabilities, t)?, t)),
            FlagRule::Contamination => {
                let c = config.contamination()?;
                let cut = stats::quantile(raw, 1.0 - c);
                Ok((raw.iter().map(|&x| x > cut).collect(), cut))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVerdict {
    pub raw_scores: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub flags: Vec<bool>,
    /// Probability cut, or the raw-score cut under the contamination rule.
    pub threshold: f64,
}

impl ProbabilityVerdict {
    pub fn from_scores(config: &DetectorConfig, raw: Vec<f64>, rule: FlagRule) -> Result<Self> {
        let probabilities = normalize_scores(&raw);
        let (flags, threshold) = rule.apply(config, &raw, &probabilities)?;
        Ok(ProbabilityVerdict {
            raw_scores: raw,
            probabilities,
            flags,
            threshold,
        })
    }

    pub fn write_csv<W: Write>(&self, cycle_index: &[u32], mut out: W) -> Result<()> {
        let path = Path::new("<verdict>");
        let io = |e| Error::io(path, e);
        writeln!(out, "# threshold={}", self.threshold).map_err(io)?;
        writeln!(out, "cycle_index,raw_score,probability,flagged").map_err(io)?;
        for i in 0..self.raw_scores.len() {
            writeln!(
                out,
                "{},{},{},{}",
                cycle_index[i],
                self.raw_scores[i],
                self.probabilities[i],
                u8::from(self.flags[i])
            )
            .map_err(io)?;
        }
        Ok(())
    }
}

/// Fit on `rows`, score the same rows and threshold them.
pub fn detect(
    config: &DetectorConfig,
    rows: &[Vec<f64>],
    rule: FlagRule,
    exec: Exec,
) -> Result<(FittedDetector, ProbabilityVerdict)> {
    let fitted = fit(config, rows, exec)?;
    let raw = fitted.score(rows, exec)?;
    let verdict = ProbabilityVerdict::from_scores(config, raw, rule)?;
    Ok((fitted, verdict))
}
