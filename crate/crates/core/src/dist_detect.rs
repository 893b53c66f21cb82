//! Centroid-based distance detectors and score grids for contour maps.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linalg::{self, Covariance};
use crate::ml::normalize_scores;
use crate::stat_detect::{self, GAUSSIAN_MAD_FACTOR};
use crate::stats;

#[derive(Debug, Clone, PartialEq)]
pub enum MetricSpec {
    Euclidean,
    Manhattan,
    Minkowski { p: f64 },
    /// `None` means "estimate from the data" where a data set is available.
    Mahalanobis(Option<Covariance>),
}

impl MetricSpec {
    pub fn minkowski(p: f64) -> Result<Self> {
        if !(p > 0.0) || !p.is_finite() {
            return Err(Error::param("p", format!("must be a positive finite number, got {p}")));
        }
        Ok(MetricSpec::Minkowski { p })
    }

    pub fn name(&self) -> &'static str {
        match self {
            MetricSpec::Euclidean => "euclidean",
            MetricSpec::Manhattan => "manhattan",
            MetricSpec::Minkowski { .. } => "minkowski",
            MetricSpec::Mahalanobis(_) => "mahalanobis",
        }
    }

    /// Parses `euclidean`, `manhattan`, `minkowski` (with `p`) or
    /// `mahalanobis` (covariance estimated later).
    pub fn parse(name: &str, p: f64) -> Result<Self> {
        match name {
            "euclidean" => Ok(MetricSpec::Euclidean),
            "manhattan" => Ok(MetricSpec::Manhattan),
            "minkowski" => MetricSpec::minkowski(p),
            "mahalanobis" => Ok(MetricSpec::Mahalanobis(None)),
            other => Err(Error::param("metric", format!("unknown metric `{other}`"))),
        }
    }

    /// Fills in a data-estimated covariance for Mahalanobis.
    pub fn resolve(&self, rows: &[Vec<f64>]) -> Result<MetricSpec> {
        match self {
            MetricSpec::Mahalanobis(None) => {
                Ok(MetricSpec::Mahalanobis(Some(Covariance::estimate(rows)?)))
            }
            other => Ok(other.clone()),
        }
    }
}

/// Distance between two points. Mahalanobis returns the square root of the
/// quadratic form so all metrics share a distance scale.
pub fn distance(a: &[f64], b: &[f64], metric: &MetricSpec) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "points have dimensions {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(match metric {
        MetricSpec::Euclidean => a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt(),
        MetricSpec::Manhattan => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        MetricSpec::Minkowski { p } => a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs().powf(*p))
            .sum::<f64>()
            .powf(1.0 / p),
        MetricSpec::Mahalanobis(cov) => {
            let cov = cov.as_ref().ok_or_else(|| {
                Error::SingularCovariance("Mahalanobis metric has no covariance".into())
            })?;
            if cov.dim() != a.len() {
                return Err(Error::Shape(format!(
                    "covariance is {0}x{0} but points have dimension {1}",
                    cov.dim(),
                    a.len()
                )));
            }
            let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
            cov.quad_form(&diff).max(0.0).sqrt()
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceVerdict {
    pub centroid: Vec<f64>,
    pub distances: Vec<f64>,
    pub normalized: Vec<f64>,
    pub flags: Vec<bool>,
    pub mad_threshold: f64,
    /// Distance above which a row is flagged.
    pub cutoff: f64,
}

impl DistanceVerdict {
    pub fn write_csv<W: Write>(&self, cycle_index: &[u32], mut out: W) -> Result<()> {
        let path = Path::new("<verdict>");
        let io = |e| Error::io(path, e);
        writeln!(
            out,
            "# mad_threshold={} cutoff={} centroid={}",
            self.mad_threshold,
            self.cutoff,
            self.centroid
                .iter()
                .map(f64::to_string)
                .collect::<Vec<_>>()
                .join(";")
        )
        .map_err(io)?;
        writeln!(out, "cycle_index,distance,normalized,flagged").map_err(io)?;
        for i in 0..self.distances.len() {
            writeln!(
                out,
                "{},{},{},{}",
                cycle_index[i],
                self.distances[i],
                self.normalized[i],
                u8::from(self.flags[i])
            )
            .map_err(io)?;
        }
        Ok(())
    }
}

fn check_rows(rows: &[Vec<f64>]) -> Result<usize> {
    let d = rows.first().map_or(0, Vec::len);
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("rows must be non-empty and share a dimension".into()));
    }
    Ok(d)
}

/// Distances of every row to the componentwise mean, flagged by the
/// one-sided MAD rule `distance > median + threshold · MAD`.
pub fn centroid_detect(
    rows: &[Vec<f64>],
    metric: &MetricSpec,
    mad_threshold: f64,
) -> Result<DistanceVerdict> {
    check_rows(rows)?;
    if rows.len() < 3 {
        return Err(Error::InsufficientData(
            "centroid detection needs at least 3 rows".into(),
        ));
    }
    let metric = metric.resolve(rows)?;
    let centroid = linalg::column_means(rows);
    let distances = rows
        .iter()
        .map(|r| distance(r, &centroid, &metric))
        .collect::<Result<Vec<_>>>()?;
    let (lo, hi) = stats::min_max(&distances);
    if lo == hi {
        return Err(Error::DegenerateSpread("all centroid distances are equal".into()));
    }
    let (flags, cutoff) =
        stat_detect::mad_upper_flags(&distances, mad_threshold, GAUSSIAN_MAD_FACTOR)?;
    Ok(DistanceVerdict {
        centroid,
        normalized: normalize_scores(&distances),
        distances,
        flags,
        mad_threshold,
        cutoff,
    })
}

/// Regular 2-D grid of values, row-major with `x` varying fastest:
/// `values[iy * xs.len() + ix]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSidecar {
    pub bounds: [[f64; 2]; 2],
    pub resolution: [usize; 2],
    pub source: String,
    pub features: Vec<String>,
}

impl ScoreGrid {
    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.xs.len() + ix]
    }

    pub fn nodes(&self) -> Vec<Vec<f64>> {
        self.ys
            .iter()
            .flat_map(|&y| self.xs.iter().map(move |&x| vec![x, y]))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let path = Path::new("<grid>");
        let io = |e| Error::io(path, e);
        writeln!(out, "x,y,value").map_err(io)?;
        for (iy, y) in self.ys.iter().enumerate() {
            for (ix, x) in self.xs.iter().enumerate() {
                writeln!(out, "{x},{y},{}", self.at(ix, iy)).map_err(io)?;
            }
        }
        Ok(())
    }

    pub fn sidecar(&self, source: &str, features: &[&str]) -> GridSidecar {
        GridSidecar {
            bounds: [
                [self.xs[0], *self.xs.last().unwrap()],
                [self.ys[0], *self.ys.last().unwrap()],
            ],
            resolution: [self.xs.len(), self.ys.len()],
            source: source.to_string(),
            features: features.iter().map(|s| s.to_string()).collect(),
        }
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Bounding box of the data expanded by 10 % of the range per side.
pub fn default_bounds(rows: &[Vec<f64>]) -> Result<[[f64; 2]; 2]> {
    if check_rows(rows)? != 2 {
        return Err(Error::Shape("score grids need exactly 2 feature columns".into()));
    }
    let mut b = [[0.0; 2]; 2];
    for (axis, slot) in b.iter_mut().enumerate() {
        let col: Vec<f64> = rows.iter().map(|r| r[axis]).collect();
        let (lo, hi) = stats::min_max(&col);
        let pad = if hi > lo { 0.1 * (hi - lo) } else { 0.5 };
        *slot = [lo - pad, hi + pad];
    }
    Ok(b)
}

/// Builds the grid nodes and evaluates `f` on all of them.
pub fn evaluate_grid(
    resolution: [usize; 2],
    bounds: [[f64; 2]; 2],
    exec: Exec,
    f: impl Fn(&[f64]) -> f64 + Sync + Send,
) -> Result<ScoreGrid> {
    for (axis, (&r, b)) in resolution.iter().zip(&bounds).enumerate() {
        if r < 2 {
            return Err(Error::Bounds(format!("axis {axis}: resolution must be at least 2")));
        }
        if !(b[0].is_finite() && b[1].is_finite() && b[0] < b[1]) {
            return Err(Error::Bounds(format!("axis {axis}: [{}, {}]", b[0], b[1])));
        }
    }
    let xs = linspace(bounds[0][0], bounds[0][1], resolution[0]);
    let ys = linspace(bounds[1][0], bounds[1][1], resolution[1]);
    let nx = xs.len();
    let values = exec.map_range(nx * ys.len(), |k| f(&[xs[k % nx], ys[k / nx]]));
    Ok(ScoreGrid { xs, ys, values })
}

/// Normalized centroid distance over a grid. Normalization uses the min and
/// max of the observed rows' distances, clamped to `[0, 1]`.
pub fn score_grid(
    rows: &[Vec<f64>],
    metric: &MetricSpec,
    resolution: usize,
    bounds: Option<[[f64; 2]; 2]>,
    exec: Exec,
) -> Result<ScoreGrid> {
    let bounds = match bounds {
        Some(b) => b,
        None => default_bounds(rows)?,
    };
    if check_rows(rows)? != 2 {
        return Err(Error::Shape("score grids need exactly 2 feature columns".into()));
    }
    let metric = metric.resolve(rows)?;
    let centroid = linalg::column_means(rows);
    let data_d = rows
        .iter()
        .map(|r| distance(r, &centroid, &metric))
        .collect::<Result<Vec<_>>>()?;
    let (lo, hi) = stats::min_max(&data_d);
    let span = hi - lo;
    evaluate_grid([resolution, resolution], bounds, exec, |p| {
        let d = distance(p, &centroid, &metric).unwrap_or(f64::NAN);
        if span > 0.0 {
            ((d - lo) / span).clamp(0.0, 1.0)
        } else {
            0.0
        }
    })
}
