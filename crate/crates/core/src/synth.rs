//! Synthetic discharge cycles with injected anomalies and known labels.
//!
//! Each cycle discharges from 0 to `Q_c` ampere-hours in evenly spaced
//! samples. Voltage is a gently sloped plateau minus a logistic knee near
//! the end of discharge, plus seeded measurement noise. `Q_c` fades linearly
//! with the cycle index and carries a small seeded jitter. An anomaly adds
//! `magnitude` to a contiguous range of samples on the chosen channel(s):
//!
//! | kind       | displaced samples              |
//! |------------|--------------------------------|
//! | point      | one sample at 40 % of the cycle |
//! | local      | a block of 5 % of the samples   |
//! | collective | the middle third                |
//! | global     | from mid-cycle to the end       |

use std::collections::BTreeSet;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{CycleRecord, CycleStore, Label, LabelMap, Sample};
use crate::error::{Error, Result};
use crate::exec::{derive_seed, stable_hash};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnomalyKind {
    Point,
    Collective,
    Local,
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AffectedChannel {
    Voltage,
    Capacity,
    Both,
}

impl FromStr for AnomalyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "point" => Ok(AnomalyKind::Point),
            "collective" => Ok(AnomalyKind::Collective),
            "local" => Ok(AnomalyKind::Local),
            "global" => Ok(AnomalyKind::Global),
            other => Err(Error::Spec(format!("unknown anomaly kind `{other}`"))),
        }
    }
}

impl FromStr for AffectedChannel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "voltage" => Ok(AffectedChannel::Voltage),
            "capacity" => Ok(AffectedChannel::Capacity),
            "both" => Ok(AffectedChannel::Both),
            other => Err(Error::Spec(format!("unknown channel `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalySpec {
    pub kind: AnomalyKind,
    pub cycles: Vec<u32>,
    pub magnitude: f64,
    pub channel: AffectedChannel,
}

impl AnomalySpec {
    pub fn new(kind: AnomalyKind, cycles: &[u32], magnitude: f64, channel: AffectedChannel) -> Self {
        AnomalySpec {
            kind,
            cycles: cycles.to_vec(),
            magnitude,
            channel,
        }
    }

    /// Sample range `[start, end)` displaced in a cycle of `n` samples.
    pub fn span(&self, n: usize) -> (usize, usize) {
        match self.kind {
            AnomalyKind::Point => {
                let i = (n * 2 / 5).min(n - 1);
                (i, i + 1)
            }
            AnomalyKind::Local => {
                let len = (n / 20).max(1);
                let start = (n * 3 / 5).min(n - len);
                (start, start + len)
            }
            AnomalyKind::Collective => (n / 3, (2 * n / 3).max(n / 3 + 1)),
            AnomalyKind::Global => (n / 2, n),
        }
    }
}

/// Shape of the clean curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FadeParams {
    /// Capacity of cycle 0 in Ah.
    pub initial_capacity: f64,
    /// Fractional capacity loss per cycle.
    pub fade_per_cycle: f64,
    /// Standard deviation of the per-cycle capacity jitter in Ah.
    pub capacity_jitter: f64,
    pub plateau_voltage: f64,
    /// Linear voltage drop across the plateau.
    pub plateau_slope: f64,
    /// Depth of the end-of-discharge knee.
    pub knee_depth: f64,
    pub voltage_noise: f64,
    /// Seconds between samples.
    pub sample_period: f64,
}

impl Default for FadeParams {
    fn default() -> Self {
        FadeParams {
            initial_capacity: 1.1,
            fade_per_cycle: 2e-4,
            capacity_jitter: 5e-4,
            plateau_voltage: 3.3,
            plateau_slope: 0.1,
            knee_depth: 1.0,
            voltage_noise: 1e-3,
            sample_period: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub cell_id: String,
    pub n_cycles: u32,
    pub samples_per_cycle: usize,
    pub fade: FadeParams,
    pub anomalies: Vec<AnomalySpec>,
    pub seed: u64,
}

impl CellSpec {
    pub fn new(cell_id: &str, n_cycles: u32, samples_per_cycle: usize, seed: u64) -> Self {
        CellSpec {
            cell_id: cell_id.to_string(),
            n_cycles,
            samples_per_cycle,
            fade: FadeParams::default(),
            anomalies: Vec::new(),
            seed,
        }
    }

    pub fn with_anomaly(mut self, a: AnomalySpec) -> Self {
        self.anomalies.push(a);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCell {
    pub records: Vec<CycleRecord>,
    pub labels: Vec<u8>,
}

impl SynthCell {
    pub fn outlier_cycles(&self) -> BTreeSet<u32> {
        self.records
            .iter()
            .zip(&self.labels)
            .filter(|(_, &l)| l == 1)
            .map(|(r, _)| r.cycle_index)
            .collect()
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn generate_cell(spec: &CellSpec) -> Result<SynthCell> {
    if spec.n_cycles < 1 {
        return Err(Error::Spec("at least one cycle is required".into()));
    }
    if spec.samples_per_cycle < 2 {
        return Err(Error::Spec("at least two samples per cycle are required".into()));
    }
    for a in &spec.anomalies {
        if !(a.magnitude > 0.0 && a.magnitude.is_finite()) {
            return Err(Error::Spec(format!("magnitude {} must be positive", a.magnitude)));
        }
        if let Some(&c) = a.cycles.iter().find(|&&c| c >= spec.n_cycles) {
            return Err(Error::Spec(format!(
                "target cycle {c} outside 0..{}",
                spec.n_cycles
            )));
        }
    }
    let f = &spec.fade;
    let s = spec.samples_per_cycle;
    let noise = Normal::new(0.0, f.voltage_noise.max(0.0))
        .map_err(|e| Error::Spec(format!("voltage noise: {e}")))?;
    let jitter = Normal::new(0.0, f.capacity_jitter.max(0.0))
        .map_err(|e| Error::Spec(format!("capacity jitter: {e}")))?;
    let mut records = Vec::with_capacity(spec.n_cycles as usize);
    let mut labels = Vec::with_capacity(spec.n_cycles as usize);
    for c in 0..spec.n_cycles {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            spec.seed,
            &[stable_hash(&spec.cell_id), u64::from(c)],
        ));
        let q_c = (f.initial_capacity * (1.0 - f.fade_per_cycle * f64::from(c)) + jitter.sample(&mut rng))
            .max(f64::MIN_POSITIVE);
        let mut volts = Vec::with_capacity(s);
        let mut caps = Vec::with_capacity(s);
        for k in 0..s {
            let x = k as f64 / (s - 1) as f64;
            let v = f.plateau_voltage - f.plateau_slope * x - f.knee_depth * logistic((x - 0.95) / 0.015)
                + noise.sample(&mut rng);
            volts.push(v);
            caps.push(q_c * x);
        }
        let mut label = Label::Inlier;
        for a in spec.anomalies.iter().filter(|a| a.cycles.contains(&c)) {
            label = Label::Outlier;
            let (lo, hi) = a.span(s);
            for k in lo..hi {
                if matches!(a.channel, AffectedChannel::Voltage | AffectedChannel::Both) {
                    volts[k] += a.magnitude;
                }
                if matches!(a.channel, AffectedChannel::Capacity | AffectedChannel::Both) {
                    caps[k] += a.magnitude;
                }
            }
        }
        records.push(CycleRecord {
            cell_id: spec.cell_id.clone(),
            cycle_index: c,
            samples: (0..s)
                .map(|k| Sample {
                    time: k as f64 * f.sample_period,
                    voltage: volts[k],
                    capacity: caps[k],
                })
                .collect(),
            label: Some(label),
        });
        labels.push(label.as_u8());
    }
    Ok(SynthCell { records, labels })
}

/// Three gross anomalies on different channels: a collective voltage shift
/// at 1/4 of the cycles, a capacity point spike at 1/2 and a local shift of
/// both channels at 3/4.
pub fn default_anomalies(n_cycles: u32, magnitude: f64) -> Vec<AnomalySpec> {
    let at = |num: u32| (n_cycles * num / 4).min(n_cycles.saturating_sub(1));
    vec![
        AnomalySpec::new(AnomalyKind::Collective, &[at(1)], magnitude, AffectedChannel::Voltage),
        AnomalySpec::new(AnomalyKind::Point, &[at(2)], magnitude, AffectedChannel::Capacity),
        AnomalySpec::new(AnomalyKind::Local, &[at(3)], magnitude, AffectedChannel::Both),
    ]
}

/// Builds a store and label map from several generated cells.
pub fn to_store(cells: &[SynthCell]) -> Result<(CycleStore, LabelMap)> {
    let mut labels = LabelMap::new();
    for c in cells {
        let id = c.records.first().map(|r| r.cell_id.clone()).unwrap_or_default();
        labels.insert(id, c.outlier_cycles());
    }
    let store = CycleStore::from_records(cells.iter().flat_map(|c| c.records.iter().cloned()))?;
    Ok((store, labels))
}
