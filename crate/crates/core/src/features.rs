//! Cycle-level feature engineering.
//!
//! Raw voltage and capacity are shifted by `median² / IQR`, then every cycle
//! is reduced to the largest jump between consecutive samples. A collective
//! anomaly inside a cycle (a run of abnormal readings) therefore shows up as a
//! single extreme value for that cycle.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::CycleRecord;
use crate::error::{Error, Result};
use crate::linalg::Covariance;
use crate::stats;

/// Smallest |ΔQ| used as a divisor in the dV/dQ feature.
pub const DQ_GUARD: f64 = 1e-12;
/// Floor applied to non-positive values before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-12;

pub const DV_MAX: &str = "dv_max";
pub const DQ_MAX: &str = "dq_max";
pub const DVDQ_MAX: &str = "dvdq_max";
pub const CAPACITY_MAX: &str = "capacity_max";
pub const MAHALANOBIS: &str = "mahalanobis";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Voltage,
    Capacity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaledSeries {
    pub values: Vec<f64>,
    pub origin: Channel,
    pub median: f64,
    pub iqr: f64,
}

impl ScaledSeries {
    pub fn offset(&self) -> f64 {
        self.median * self.median / self.iqr
    }
}

/// `x_i - median(X)² / IQR(X)`.
pub fn median_iqr_transform(series: &[f64], origin: Channel, name: &str) -> Result<ScaledSeries> {
    if series.is_empty() {
        return Err(Error::EmptyInput(name.to_string()));
    }
    let s = stats::sorted(series);
    let median = stats::quantile_sorted(&s, 0.5);
    let iqr = stats::quantile_sorted(&s, 0.75) - stats::quantile_sorted(&s, 0.25);
    if !(iqr > 0.0) {
        return Err(Error::DegenerateSpread(format!("{name}: IQR is zero")));
    }
    let offset = median * median / iqr;
    Ok(ScaledSeries {
        values: series.iter().map(|x| x - offset).collect(),
        origin,
        median,
        iqr,
    })
}

/// Per-cycle feature table for one cell.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureMatrix {
    pub cycle_index: Vec<u32>,
    columns: Vec<(String, Vec<f64>)>,
}

impl FeatureMatrix {
    pub fn new(cycle_index: Vec<u32>) -> Self {
        FeatureMatrix {
            cycle_index,
            columns: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.cycle_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cycle_index.is_empty()
    }

    /// Adds or replaces a column.
    pub fn set_column(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        let name = name.into();
        if values.len() != self.len() {
            return Err(Error::Shape(format!(
                "column `{name}` has {} rows, expected {}",
                values.len(),
                self.len()
            )));
        }
        match self.columns.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = values,
            None => self.columns.push((name, values)),
        }
        Ok(())
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::Shape(format!("no feature column `{name}`")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|(n, _)| n.as_str())
    }

    /// Row-major points over the requested columns.
    pub fn rows(&self, names: &[&str]) -> Result<Vec<Vec<f64>>> {
        let cols = names
            .iter()
            .map(|n| self.column(n))
            .collect::<Result<Vec<_>>>()?;
        Ok((0..self.len())
            .map(|i| cols.iter().map(|c| c[i]).collect())
            .collect())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let path = Path::new("<features>");
        let wrap = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["cycle_index".to_string()];
        header.extend(self.columns.iter().map(|(n, _)| n.clone()));
        w.write_record(&header).map_err(wrap)?;
        for (i, c) in self.cycle_index.iter().enumerate() {
            let mut row = vec![c.to_string()];
            row.extend(self.columns.iter().map(|(_, v)| v[i].to_string()));
            w.write_record(&row).map_err(wrap)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let path = Path::new("<features>");
        let wrap = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut rdr = csv::Reader::from_reader(input);
        let headers = rdr.headers().map_err(wrap)?.clone();
        if headers.get(0) != Some("cycle_index") {
            return Err(Error::MissingColumn {
                role: "cycle_index",
                column: "cycle_index".into(),
            });
        }
        let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        let mut idx = Vec::new();
        let mut cols = vec![Vec::new(); names.len()];
        for (n, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(wrap)?;
            let parse = |j: usize, col: &str| -> Result<f64> {
                let raw = rec.get(j).unwrap_or("");
                raw.parse().map_err(|_| Error::Parse {
                    row: n + 1,
                    column: col.to_string(),
                    value: raw.to_string(),
                })
            };
            idx.push(parse(0, "cycle_index")? as u32);
            for (j, name) in names.iter().enumerate() {
                cols[j].push(parse(j + 1, name)?);
            }
        }
        let mut fm = FeatureMatrix::new(idx);
        for (n, c) in names.into_iter().zip(cols) {
            fm.set_column(n, c)?;
        }
        Ok(fm)
    }
}

/// Rows that needed special handling while building features.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureReport {
    /// Cycles whose every ΔQ was below [`DQ_GUARD`].
    pub dvdq_clamped: Vec<u32>,
    /// Cycles floored before a log, per column.
    pub log_floored: BTreeMap<String, Vec<u32>>,
    /// Cycles whose voltage or capacity had zero IQR and were left unshifted.
    pub degenerate_transform: Vec<(u32, Channel)>,
}

/// Max-jump statistics of one cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleMaxima {
    pub dv_max: f64,
    pub dq_max: f64,
    pub dvdq_max: f64,
    /// True when every ΔQ was below the guard and the ratio used the clamp.
    pub dq_clamped: bool,
}

/// Largest consecutive differences and differential ratio of one cycle.
pub fn cycle_maxima(v: &[f64], q: &[f64]) -> CycleMaxima {
    debug_assert_eq!(v.len(), q.len());
    let mut dv_max = f64::NEG_INFINITY;
    let mut dq_max = f64::NEG_INFINITY;
    let mut ratio_max = f64::NEG_INFINITY;
    let mut clamped_max = f64::NEG_INFINITY;
    for k in 0..v.len().saturating_sub(1) {
        let dv = v[k + 1] - v[k];
        let dq = q[k + 1] - q[k];
        dv_max = dv_max.max(dv);
        dq_max = dq_max.max(dq);
        if dq.abs() >= DQ_GUARD {
            ratio_max = ratio_max.max(dv / dq);
        } else {
            let denom = if dq < 0.0 { -DQ_GUARD } else { DQ_GUARD };
            clamped_max = clamped_max.max(dv / denom);
        }
    }
    let dq_clamped = ratio_max == f64::NEG_INFINITY;
    CycleMaxima {
        dv_max,
        dq_max,
        dvdq_max: if dq_clamped { clamped_max } else { ratio_max },
        dq_clamped,
    }
}

/// One row per cycle with `dv_max`, `dq_max` and `dvdq_max` computed on the
/// scaled channels. `scaled[i]` is the `(voltage, capacity)` pair of
/// `cell[i]`.
pub fn extract_cycle_features(
    cell: &[CycleRecord],
    scaled: &[(ScaledSeries, ScaledSeries)],
) -> Result<(FeatureMatrix, FeatureReport)> {
    if cell.len() != scaled.len() {
        return Err(Error::Shape(format!(
            "{} cycles but {} scaled series",
            cell.len(),
            scaled.len()
        )));
    }
    let mut order: Vec<usize> = (0..cell.len()).collect();
    order.sort_by_key(|&i| cell[i].cycle_index);
    let mut report = FeatureReport::default();
    let (mut dv, mut dq, mut dvdq) = (Vec::new(), Vec::new(), Vec::new());
    for &i in &order {
        let rec = &cell[i];
        let (sv, sq) = &scaled[i];
        if rec.samples.len() < 2 || sv.values.len() < 2 {
            return Err(Error::ShortCycle {
                cell: rec.cell_id.clone(),
                cycle: rec.cycle_index,
                samples: rec.samples.len(),
            });
        }
        if sv.values.len() != sq.values.len() {
            return Err(Error::Shape(format!(
                "cycle {}: voltage and capacity lengths differ",
                rec.cycle_index
            )));
        }
        let m = cycle_maxima(&sv.values, &sq.values);
        if m.dq_clamped {
            report.dvdq_clamped.push(rec.cycle_index);
        }
        dv.push(m.dv_max);
        dq.push(m.dq_max);
        dvdq.push(m.dvdq_max);
    }
    let mut fm = FeatureMatrix::new(order.iter().map(|&i| cell[i].cycle_index).collect());
    fm.set_column(DV_MAX, dv)?;
    fm.set_column(DQ_MAX, dq)?;
    fm.set_column(DVDQ_MAX, dvdq)?;
    Ok((fm, report))
}

/// Scales both channels of every cycle and extracts its max-jump features.
/// Cycles whose channel has zero IQR keep that channel unshifted and are
/// listed in the report.
pub fn cell_features(cell: &[CycleRecord]) -> Result<(FeatureMatrix, FeatureReport)> {
    let mut degenerate = Vec::new();
    let scaled = cell
        .iter()
        .map(|rec| {
            let mut scale = |values: Vec<f64>, ch: Channel| {
                let name = format!("cell {} cycle {} {:?}", rec.cell_id, rec.cycle_index, ch);
                match median_iqr_transform(&values, ch, &name) {
                    Ok(s) => s,
                    Err(_) => {
                        degenerate.push((rec.cycle_index, ch));
                        ScaledSeries {
                            values,
                            origin: ch,
                            median: f64::NAN,
                            iqr: 0.0,
                        }
                    }
                }
            };
            let v = scale(rec.voltages(), Channel::Voltage);
            let q = scale(rec.capacities(), Channel::Capacity);
            (v, q)
        })
        .collect::<Vec<_>>();
    let (fm, mut report) = extract_cycle_features(cell, &scaled)?;
    degenerate.sort_by_key(|&(c, ch)| (c, ch as u8));
    report.degenerate_transform = degenerate;
    Ok((fm, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogFeature {
    pub values: Vec<f64>,
    /// Row indices that were floored to [`LOG_FLOOR`].
    pub floored: Vec<usize>,
}

/// Natural log with non-positive entries floored.
pub fn log_feature(column: &[f64], name: &str) -> Result<LogFeature> {
    if column.is_empty() || column.iter().all(|&x| !(x > 0.0)) {
        return Err(Error::EmptyFeature(name.to_string()));
    }
    let mut floored = Vec::new();
    let values = column
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            if x > 0.0 {
                x.ln()
            } else {
                floored.push(i);
                LOG_FLOOR.ln()
            }
        })
        .collect();
    Ok(LogFeature { values, floored })
}

/// Adds `log_<name>` for each named column, recording floored cycles.
pub fn add_log_columns(
    fm: &mut FeatureMatrix,
    names: &[&str],
    report: &mut FeatureReport,
) -> Result<()> {
    for &name in names {
        let log_name = format!("log_{name}");
        let lf = log_feature(fm.column(name)?, name)?;
        if !lf.floored.is_empty() {
            report.log_floored.insert(
                log_name.clone(),
                lf.floored.iter().map(|&i| fm.cycle_index[i]).collect(),
            );
        }
        fm.set_column(log_name, lf.values)?;
    }
    Ok(())
}

fn yj_one(y: f64, lambda: f64) -> f64 {
    if y >= 0.0 {
        let l = y.ln_1p();
        if lambda == 0.0 {
            l
        } else {
            (lambda * l).exp_m1() / lambda
        }
    } else {
        let l = (-y).ln_1p();
        let a = 2.0 - lambda;
        if a == 0.0 {
            -l
        } else {
            -(a * l).exp_m1() / a
        }
    }
}

/// Yeo-Johnson power transform.
pub fn yeo_johnson(values: &[f64], lambda: f64) -> Vec<f64> {
    values.iter().map(|&y| yj_one(y, lambda)).collect()
}

/// Profile Gaussian log-likelihood of the transformed sample, including the
/// Jacobian term.
pub fn yeo_johnson_log_likelihood(values: &[f64], lambda: f64) -> f64 {
    let n = values.len() as f64;
    let t = yeo_johnson(values, lambda);
    let m = stats::mean(&t);
    let var = t.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let jac: f64 = values.iter().map(|y| y.signum() * y.abs().ln_1p()).sum();
    -0.5 * n * var.ln() + (lambda - 1.0) * jac
}

pub const YJ_LAMBDA_RANGE: (f64, f64) = (-2.0, 3.0);

/// λ maximizing [`yeo_johnson_log_likelihood`] on `[-2, 3]`: coarse grid,
/// then golden-section refinement around the best node.
pub fn fit_yeo_johnson_lambda(values: &[f64]) -> Result<f64> {
    if values.len() < 3 {
        return Err(Error::InsufficientData(
            "Yeo-Johnson fit needs at least 3 values".into(),
        ));
    }
    let (lo, hi) = stats::min_max(values);
    if lo == hi {
        return Err(Error::DegenerateSpread("Yeo-Johnson input is constant".into()));
    }
    let f = |l: f64| {
        let v = yeo_johnson_log_likelihood(values, l);
        if v.is_finite() {
            v
        } else {
            f64::NEG_INFINITY
        }
    };
    let (a, b) = YJ_LAMBDA_RANGE;
    let step = 0.1;
    let nodes = ((b - a) / step).round() as usize;
    let mut best = (a, f(a));
    for i in 1..=nodes {
        let l = a + i as f64 * step;
        let v = f(l);
        if v > best.1 {
            best = (l, v);
        }
    }
    let (mut x0, mut x1) = ((best.0 - step).max(a), (best.0 + step).min(b));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = x1 - g * (x1 - x0);
    let mut d = x0 + g * (x1 - x0);
    let (mut fc, mut fd) = (f(c), f(d));
    while x1 - x0 > 1e-9 {
        if fc > fd {
            x1 = d;
            d = c;
            fd = fc;
            c = x1 - g * (x1 - x0);
            fc = f(c);
        } else {
            x0 = c;
            c = d;
            fc = fd;
            d = x0 + g * (x1 - x0);
            fd = f(d);
        }
    }
    let refined = 0.5 * (x0 + x1);
    Ok(if f(refined) >= best.1 { refined } else { best.0 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalityDiagnostics {
    /// `(theoretical normal quantile, ordered sample value)`.
    pub ordered_pairs: Vec<(f64, f64)>,
    pub r_squared: f64,
    pub skewness: f64,
    pub slope: f64,
    pub intercept: f64,
}

/// Filliben order-statistic medians for a sample of size `n`.
pub fn filliben_positions(n: usize) -> Vec<f64> {
    let nf = n as f64;
    let last = 0.5f64.powf(1.0 / nf);
    (1..=n)
        .map(|i| {
            if i == 1 {
                1.0 - last
            } else if i == n {
                last
            } else {
                (i as f64 - 0.3175) / (nf + 0.365)
            }
        })
        .collect()
}

/// Normal probability plot: ordered values against normal quantiles, with
/// the R² of the least-squares line through them.
pub fn probability_plot_stats(values: &[f64]) -> Result<NormalityDiagnostics> {
    if values.len() < 3 {
        return Err(Error::InsufficientData(
            "probability plot needs at least 3 values".into(),
        ));
    }
    let normal = Normal::standard();
    let ordered = stats::sorted(values);
    let q: Vec<f64> = filliben_positions(values.len())
        .into_iter()
        .map(|p| normal.inverse_cdf(p))
        .collect();
    let mq = stats::mean(&q);
    let mo = stats::mean(&ordered);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in q.iter().zip(&ordered) {
        sxy += (x - mq) * (y - mo);
        sxx += (x - mq) * (x - mq);
        syy += (y - mo) * (y - mo);
    }
    let r_squared = if syy == 0.0 {
        0.0
    } else {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    };
    let slope = sxy / sxx;
    Ok(NormalityDiagnostics {
        ordered_pairs: q.into_iter().zip(ordered).collect(),
        r_squared,
        skewness: stats::skewness(values),
        slope,
        intercept: mo - slope * mq,
    })
}

/// Normalized Mahalanobis distance of each `(cycle_index, capacity_max)`
/// point to the sample mean.
pub fn mahalanobis_feature(cycle_index: &[u32], capacity_max: &[f64]) -> Result<Vec<f64>> {
    if cycle_index.len() != capacity_max.len() {
        return Err(Error::Shape("cycle and capacity lengths differ".into()));
    }
    if cycle_index.len() < 3 {
        return Err(Error::InsufficientData(
            "Mahalanobis feature needs at least 3 cycles".into(),
        ));
    }
    let rows: Vec<Vec<f64>> = cycle_index
        .iter()
        .zip(capacity_max)
        .map(|(&c, &q)| vec![f64::from(c), q])
        .collect();
    let cov = Covariance::estimate(&rows)?;
    let mean = crate::linalg::column_means(&rows);
    let d: Vec<f64> = rows
        .iter()
        .map(|r| {
            let diff: Vec<f64> = r.iter().zip(&mean).map(|(a, b)| a - b).collect();
            cov.quad_form(&diff).max(0.0).sqrt()
        })
        .collect();
    Ok(crate::ml::normalize_scores(&d))
}
