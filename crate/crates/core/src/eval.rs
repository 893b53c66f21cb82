//! Confusion counts, classification metrics and benchmark reports.
//!
//! Precision, recall and F1 are 0 unless `tp > 0`; MCC is 0 when any factor
//! of its denominator is 0. Reports average per-cell metrics (macro) and a
//! metric passes when its macro value is at least the KPI.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_KPI: f64 = 0.95;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// Positive class is label 1 / flagged.
pub fn confusion(labels: &[u8], flags: &[bool]) -> Result<ConfusionCounts> {
    if labels.len() != flags.len() {
        return Err(Error::Shape(format!(
            "{} labels vs {} flags",
            labels.len(),
            flags.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&l, &f) in labels.iter().zip(flags) {
        match (l != 0, f) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mcc: f64,
}

pub const METRIC_NAMES: [&str; 5] = ["accuracy", "precision", "recall", "f1", "mcc"];

impl MetricSet {
    pub fn values(&self) -> [f64; 5] {
        [self.accuracy, self.precision, self.recall, self.f1, self.mcc]
    }

    fn from_values(v: [f64; 5]) -> Self {
        MetricSet {
            accuracy: v[0],
            precision: v[1],
            recall: v[2],
            f1: v[3],
            mcc: v[4],
        }
    }
}

pub fn metrics(c: &ConfusionCounts) -> Result<MetricSet> {
    let total = c.total();
    if total == 0 {
        return Err(Error::EmptyEvaluation);
    }
    let (tp, tn, fp, fn_) = (c.tp as f64, c.tn as f64, c.fp as f64, c.fn_ as f64);
    let precision = if c.tp > 0 { tp / (tp + fp) } else { 0.0 };
    let recall = if c.tp > 0 { tp / (tp + fn_) } else { 0.0 };
    let f1 = if c.tp > 0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let factors = [tp + fp, tp + fn_, tn + fp, tn + fn_];
    let mcc = if factors.iter().any(|&f| f == 0.0) {
        0.0
    } else {
        (tp * tn - fp * fn_) / factors.iter().product::<f64>().sqrt()
    };
    Ok(MetricSet {
        accuracy: (tp + tn) / total as f64,
        precision,
        recall,
        f1,
        mcc,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: String,
    pub counts: ConfusionCounts,
    pub metrics: MetricSet,
}

impl CellResult {
    pub fn new(cell: &str, labels: &[u8], flags: &[bool]) -> Result<Self> {
        let counts = confusion(labels, flags)?;
        Ok(CellResult {
            cell: cell.to_string(),
            counts,
            metrics: metrics(&counts)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub cells: Vec<CellResult>,
    pub macro_average: MetricSet,
    pub kpi_threshold: f64,
    /// Per metric, in [`METRIC_NAMES`] order.
    pub pass: [bool; 5],
}

pub fn benchmark_report(model: &str, cells: Vec<CellResult>, kpi: f64) -> Result<EvalReport> {
    if cells.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let mut sum = [0.0; 5];
    for c in &cells {
        for (s, v) in sum.iter_mut().zip(c.metrics.values()) {
            *s += v;
        }
    }
    let n = cells.len() as f64;
    let macro_average = MetricSet::from_values(sum.map(|s| s / n));
    let pass = macro_average.values().map(|v| v >= kpi);
    Ok(EvalReport {
        model: model.to_string(),
        cells,
        macro_average,
        kpi_threshold: kpi,
        pass,
    })
}

/// `model,scope,metric,value,pass` rows for several reports; `scope` is a
/// cell id or `macro`, and `pass` is only filled on macro rows.
pub fn write_report_csv<W: Write>(reports: &[EvalReport], mut out: W) -> std::io::Result<()> {
    writeln!(out, "model,scope,metric,value,pass")?;
    for r in reports {
        for (i, name) in METRIC_NAMES.iter().enumerate() {
            writeln!(
                out,
                "{},macro,{},{},{}",
                r.model,
                name,
                r.macro_average.values()[i],
                u8::from(r.pass[i])
            )?;
        }
        for c in &r.cells {
            for (name, v) in METRIC_NAMES.iter().zip(c.metrics.values()) {
                writeln!(out, "{},{},{},{},", r.model, c.cell, name, v)?;
            }
        }
    }
    Ok(())
}
