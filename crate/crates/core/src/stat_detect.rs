//! Univariate statistical detectors: SD, MAD, IQR, Z-score and modified
//! Z-score.
//!
//! Every method reduces to a center, a spread and a multiplier. A value is
//! flagged when its standardized distance from the center exceeds the
//! multiplier (IQR uses the whisker limits directly). Since SD and Z-score
//! share the same standardized comparison, their flags are always identical.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

/// Standard-normal 75th percentile.
pub const NORMAL_Q75: f64 = 0.674_489_750_196_081_7;
/// `1 / NORMAL_Q75`, rounded the way it is usually quoted.
pub const GAUSSIAN_MAD_FACTOR: f64 = 1.4826;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatMethod {
    Sd,
    Mad,
    Iqr,
    Zscore,
    ModZscore,
}

impl StatMethod {
    pub const ALL: [StatMethod; 5] = [
        StatMethod::Sd,
        StatMethod::Mad,
        StatMethod::Iqr,
        StatMethod::Zscore,
        StatMethod::ModZscore,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StatMethod::Sd => "sd",
            StatMethod::Mad => "mad",
            StatMethod::Iqr => "iqr",
            StatMethod::Zscore => "zscore",
            StatMethod::ModZscore => "mod_zscore",
        }
    }
}

impl fmt::Display for StatMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StatMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        StatMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::param("method", format!("unknown statistical method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatOptions {
    pub mad_factor: f64,
    pub mad_k: f64,
    pub z_limit: f64,
    pub mod_z_limit: f64,
    pub sd_k: f64,
    pub iqr_k: f64,
}

impl Default for StatOptions {
    fn default() -> Self {
        StatOptions {
            mad_factor: GAUSSIAN_MAD_FACTOR,
            mad_k: 3.0,
            z_limit: 3.0,
            mod_z_limit: 3.5,
            sd_k: 3.0,
            iqr_k: 1.5,
        }
    }
}

/// Limits are always expressed in the units of the input values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatLimits {
    pub method: StatMethod,
    pub lower: f64,
    pub upper: f64,
    pub center: f64,
    pub spread: f64,
    pub mad_factor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatVerdict {
    pub flags: Vec<bool>,
    /// Raw values for SD/MAD/IQR, standardized scores for the Z variants.
    pub scores: Vec<f64>,
    pub limits: StatLimits,
}

impl StatVerdict {
    pub fn flagged_indices(&self) -> Vec<usize> {
        self.flags
            .iter()
            .enumerate()
            .filter_map(|(i, &f)| f.then_some(i))
            .collect()
    }

    /// `cycle_index,score,flagged` with a `#` comment line carrying the limits.
    pub fn write_csv<W: Write>(&self, cycle_index: &[u32], mut out: W) -> Result<()> {
        let path = Path::new("<verdict>");
        let l = &self.limits;
        writeln!(
            out,
            "# method={} lower={} upper={} center={} spread={}{}",
            l.method,
            l.lower,
            l.upper,
            l.center,
            l.spread,
            l.mad_factor
                .map(|f| format!(" mad_factor={f}"))
                .unwrap_or_default()
        )
        .map_err(|e| Error::io(path, e))?;
        writeln!(out, "cycle_index,score,flagged").map_err(|e| Error::io(path, e))?;
        for ((c, s), f) in cycle_index.iter().zip(&self.scores).zip(&self.flags) {
            writeln!(out, "{c},{s},{}", u8::from(*f)).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

/// `F_MAD = 1 / q75` of the reference distribution.
pub fn compute_mad_factor(ref_quantile_75: f64) -> Result<f64> {
    if !(ref_quantile_75 > 0.0) {
        return Err(Error::InvalidQuantile(ref_quantile_75));
    }
    Ok(1.0 / ref_quantile_75)
}

/// Scaled MAD `|F_MAD| · median(|x - M|)` and the median `M`.
pub fn scaled_mad(values: &[f64], mad_factor: f64) -> (f64, f64) {
    let (m, raw) = stats::raw_mad(values);
    (m, mad_factor.abs() * raw)
}

fn standardized_flags(values: &[f64], center: f64, spread: f64, k: f64) -> (Vec<f64>, Vec<bool>) {
    let z: Vec<f64> = values.iter().map(|x| (x - center) / spread).collect();
    let flags = z.iter().map(|z| z.abs() > k).collect();
    (z, flags)
}

pub fn detect_stat(values: &[f64], method: StatMethod, opts: &StatOptions) -> Result<StatVerdict> {
    if values.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{method} needs at least 2 values"
        )));
    }
    let degenerate = || Error::DegenerateSpread(format!("{method}: spread is zero"));
    match method {
        StatMethod::Sd | StatMethod::Zscore => {
            let mu = stats::mean(values);
            let sigma = stats::sample_std(values);
            if !(sigma > 0.0) {
                return Err(degenerate());
            }
            let k = if method == StatMethod::Sd {
                opts.sd_k
            } else {
                opts.z_limit
            };
            let (z, flags) = standardized_flags(values, mu, sigma, k);
            Ok(StatVerdict {
                flags,
                scores: if method == StatMethod::Sd {
                    values.to_vec()
                } else {
                    z
                },
                limits: StatLimits {
                    method,
                    lower: mu - k * sigma,
                    upper: mu + k * sigma,
                    center: mu,
                    spread: sigma,
                    mad_factor: None,
                },
            })
        }
        StatMethod::Mad | StatMethod::ModZscore => {
            let (m, mad) = scaled_mad(values, opts.mad_factor);
            if !(mad > 0.0) {
                return Err(degenerate());
            }
            let k = if method == StatMethod::Mad {
                opts.mad_k
            } else {
                opts.mod_z_limit
            };
            let (z, flags) = standardized_flags(values, m, mad, k);
            Ok(StatVerdict {
                flags,
                scores: if method == StatMethod::Mad {
                    values.to_vec()
                } else {
                    z
                },
                limits: StatLimits {
                    method,
                    lower: m - k * mad,
                    upper: m + k * mad,
                    center: m,
                    spread: mad,
                    mad_factor: Some(opts.mad_factor),
                },
            })
        }
        StatMethod::Iqr => {
            let s = stats::sorted(values);
            let q1 = stats::quantile_sorted(&s, 0.25);
            let q3 = stats::quantile_sorted(&s, 0.75);
            let iqr = q3 - q1;
            if !(iqr > 0.0) {
                return Err(degenerate());
            }
            let lower = q1 - opts.iqr_k * iqr;
            let upper = q3 + opts.iqr_k * iqr;
            Ok(StatVerdict {
                flags: values.iter().map(|&x| x < lower || x > upper).collect(),
                scores: values.to_vec(),
                limits: StatLimits {
                    method,
                    lower,
                    upper,
                    center: stats::quantile_sorted(&s, 0.5),
                    spread: iqr,
                    mad_factor: None,
                },
            })
        }
    }
}

/// One-sided MAD rule: `x > median + k · MAD`.
pub fn mad_upper_flags(values: &[f64], k: f64, mad_factor: f64) -> Result<(Vec<bool>, f64)> {
    if values.len() < 2 {
        return Err(Error::InsufficientData("MAD rule needs at least 2 values".into()));
    }
    let (m, mad) = scaled_mad(values, mad_factor);
    if !(mad > 0.0) {
        return Err(Error::DegenerateSpread("MAD of distances is zero".into()));
    }
    let cut = m + k * mad;
    Ok((values.iter().map(|&x| x > cut).collect(), cut))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: [f64; 6] = [1.0, 2.0, 3.0, 4.0, 5.0, 100.0];

    #[test]
    fn mad_factor_reciprocal() {
        assert!((compute_mad_factor(0.67449).unwrap() - 1.4826).abs() < 5e-5);
        assert_eq!(compute_mad_factor(0.5).unwrap(), 2.0);
        assert!(matches!(compute_mad_factor(0.0), Err(Error::InvalidQuantile(_))));
    }

    #[test]
    fn mad_example() {
        let v = detect_stat(&SMALL, StatMethod::Mad, &StatOptions::default()).unwrap();
        assert!((v.limits.spread - 2.2239).abs() < 1e-4);
        assert!((v.limits.lower + 3.172).abs() < 1e-3);
        assert!((v.limits.upper - 10.172).abs() < 1e-3);
        assert_eq!(v.flagged_indices(), vec![5]);
    }

    #[test]
    fn iqr_example() {
        let v = detect_stat(&SMALL, StatMethod::Iqr, &StatOptions::default()).unwrap();
        assert!((v.limits.lower + 1.5).abs() < 1e-12);
        assert!((v.limits.upper - 8.5).abs() < 1e-12);
        assert_eq!(v.flagged_indices(), vec![5]);
    }

    #[test]
    fn zscore_masking() {
        let v = detect_stat(&[0.0, 0.0, 0.0, 0.0, 10.0], StatMethod::Zscore, &StatOptions::default())
            .unwrap();
        assert!((v.scores[4] - 1.7889).abs() < 1e-4);
        assert!(v.flags.iter().all(|f| !f));
    }

    #[test]
    fn degenerate_spread_names_method() {
        for m in StatMethod::ALL {
            let err = detect_stat(&[1.0; 5], m, &StatOptions::default()).unwrap_err();
            assert!(matches!(err, Error::DegenerateSpread(ref s) if s.contains(m.name())));
        }
    }

    #[test]
    fn modified_z_uses_mad_factor() {
        let opts = StatOptions::default();
        let v = detect_stat(&SMALL, StatMethod::ModZscore, &opts).unwrap();
        // 0.6745 (x - M) / raw MAD, folded through the same factor
        let expected = (100.0 - 3.5) / (1.4826 * 1.5);
        assert!((v.scores[5] - expected).abs() < 1e-12);
        assert_eq!(v.flagged_indices(), vec![5]);
    }

    #[test]
    fn limits_bracket_center() {
        for m in StatMethod::ALL {
            let l = detect_stat(&SMALL, m, &StatOptions::default()).unwrap().limits;
            assert!(l.lower <= l.center && l.center <= l.upper);
        }
    }

    #[test]
    fn verdict_csv_has_limits_header() {
        let v = detect_stat(&SMALL, StatMethod::Iqr, &StatOptions::default()).unwrap();
        let mut buf = Vec::new();
        v.write_csv(&[0, 1, 2, 3, 4, 5], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# method=iqr lower=-1.5 upper=8.5"));
        assert!(text.ends_with("5,100,1\n"));
    }
}
