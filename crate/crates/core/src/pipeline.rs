//! Feature recipes and the uniform detector catalogue used by the CLI.
//!
//! A recipe turns the cycles of one cell into a feature matrix and names the
//! column used by the univariate (statistical) detectors and the columns used
//! by the multivariate (distance and ML) detectors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::CycleRecord;
use crate::dist_detect::{self, MetricSpec};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::features::{self, FeatureMatrix, FeatureReport, CAPACITY_MAX, DQ_MAX, DVDQ_MAX, DV_MAX, MAHALANOBIS};
use crate::ml::{self, DetectorConfig, FlagRule, ModelKind};
use crate::stat_detect::{self, StatMethod, StatOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecipeName {
    Severson,
    Tohoku,
    Custom,
}

impl FromStr for RecipeName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "severson" => Ok(RecipeName::Severson),
            "tohoku" => Ok(RecipeName::Tohoku),
            "custom" => Ok(RecipeName::Custom),
            other => Err(Error::param("recipe", format!("unknown recipe `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRecipe {
    pub name: RecipeName,
    /// Columns that get a `log_` variant.
    pub log_of: Vec<String>,
    pub mahalanobis: bool,
    pub stat_feature: String,
    pub multivariate: Vec<String>,
}

const BASE_COLUMNS: [&str; 4] = [DV_MAX, DQ_MAX, DVDQ_MAX, CAPACITY_MAX];

impl PipelineRecipe {
    pub fn severson() -> Self {
        PipelineRecipe {
            name: RecipeName::Severson,
            log_of: vec![DV_MAX.into(), DQ_MAX.into(), DVDQ_MAX.into()],
            mahalanobis: false,
            stat_feature: format!("log_{DVDQ_MAX}"),
            multivariate: vec![format!("log_{DV_MAX}"), format!("log_{DQ_MAX}")],
        }
    }

    pub fn tohoku() -> Self {
        PipelineRecipe {
            name: RecipeName::Tohoku,
            log_of: Vec::new(),
            mahalanobis: true,
            stat_feature: MAHALANOBIS.into(),
            multivariate: vec![CAPACITY_MAX.into(), MAHALANOBIS.into()],
        }
    }

    /// `stat` feeds the statistical detectors, `multi` (defaulting to
    /// `[stat]`) the multivariate ones. With `log` every named base column is
    /// replaced by its log.
    pub fn custom(stat: &str, multi: &[String], log: bool) -> Result<Self> {
        let multi: Vec<String> = if multi.is_empty() { vec![stat.to_string()] } else { multi.to_vec() };
        let mut names: Vec<&str> = vec![stat];
        names.extend(multi.iter().map(String::as_str));
        let mahalanobis = names.contains(&MAHALANOBIS);
        for n in &names {
            if !BASE_COLUMNS.contains(n) && *n != MAHALANOBIS {
                return Err(Error::param("feature", format!("unknown feature `{n}`")));
            }
        }
        let wrap = |n: &str| if log { format!("log_{n}") } else { n.to_string() };
        let log_of: Vec<String> = if log {
            BASE_COLUMNS
                .iter()
                .filter(|c| names.contains(c))
                .map(|c| c.to_string())
                .collect()
        } else {
            Vec::new()
        };
        Ok(PipelineRecipe {
            name: RecipeName::Custom,
            log_of,
            mahalanobis,
            stat_feature: wrap(stat),
            multivariate: multi.iter().map(|n| wrap(n)).collect(),
        })
    }

    pub fn by_name(name: RecipeName) -> Option<Self> {
        match name {
            RecipeName::Severson => Some(Self::severson()),
            RecipeName::Tohoku => Some(Self::tohoku()),
            RecipeName::Custom => None,
        }
    }

    /// Per-cycle features of one cell: the max-jump columns, `capacity_max`,
    /// plus the Mahalanobis and log columns the recipe asks for.
    pub fn build(&self, cell: &[CycleRecord]) -> Result<(FeatureMatrix, FeatureReport)> {
        let (mut fm, mut report) = features::cell_features(cell)?;
        let mut sorted: Vec<&CycleRecord> = cell.iter().collect();
        sorted.sort_by_key(|r| r.cycle_index);
        let cap: Vec<f64> = sorted.iter().map(|r| r.max_capacity()).collect();
        fm.set_column(CAPACITY_MAX, cap.clone())?;
        if self.mahalanobis {
            let m = features::mahalanobis_feature(&fm.cycle_index, &cap)?;
            fm.set_column(MAHALANOBIS, m)?;
        }
        let names: Vec<&str> = self.log_of.iter().map(String::as_str).collect();
        features::add_log_columns(&mut fm, &names, &mut report)?;
        Ok((fm, report))
    }

    pub fn multivariate_rows(&self, fm: &FeatureMatrix) -> Result<Vec<Vec<f64>>> {
        let names: Vec<&str> = self.multivariate.iter().map(String::as_str).collect();
        fm.rows(&names)
    }
}

/// One of the fifteen detectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Detector {
    Stat(StatMethod),
    Distance(DistanceKind),
    Ml(ModelKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DistanceKind {
    Euclidean,
    Manhattan,
    Minkowski,
    Mahalanobis,
}

impl DistanceKind {
    pub const ALL: [DistanceKind; 4] = [
        DistanceKind::Euclidean,
        DistanceKind::Manhattan,
        DistanceKind::Minkowski,
        DistanceKind::Mahalanobis,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DistanceKind::Euclidean => "euclidean",
            DistanceKind::Manhattan => "manhattan",
            DistanceKind::Minkowski => "minkowski",
            DistanceKind::Mahalanobis => "mahalanobis",
        }
    }

    pub fn metric(self, p: f64) -> Result<MetricSpec> {
        MetricSpec::parse(self.name(), p)
    }
}

impl Detector {
    pub fn all() -> Vec<Detector> {
        let mut v: Vec<Detector> = StatMethod::ALL.into_iter().map(Detector::Stat).collect();
        v.extend(DistanceKind::ALL.into_iter().map(Detector::Distance));
        v.extend(ModelKind::ALL.into_iter().map(Detector::Ml));
        v
    }

    pub fn name(self) -> &'static str {
        match self {
            Detector::Stat(m) => m.name(),
            Detector::Distance(d) => d.name(),
            Detector::Ml(m) => m.name(),
        }
    }
}

impl fmt::Display for Detector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Detector {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Detector::all()
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::param("model", format!("unknown detector `{s}`")))
    }
}

/// Knobs shared by every detector run.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectOptions {
    pub stat: StatOptions,
    pub mad_threshold: f64,
    pub minkowski_p: f64,
    pub rule: FlagRule,
    pub seed: u64,
    /// Explicit configs per ML model; missing models use their defaults.
    pub configs: Vec<DetectorConfig>,
}

impl Default for DetectOptions {
    fn default() -> Self {
        DetectOptions {
            stat: StatOptions::default(),
            mad_threshold: 3.0,
            minkowski_p: 3.0,
            rule: FlagRule::default(),
            seed: 0,
            configs: Vec::new(),
        }
    }
}

impl DetectOptions {
    pub fn config_for(&self, model: ModelKind) -> DetectorConfig {
        self.configs
            .iter()
            .find(|c| c.model == model)
            .cloned()
            .unwrap_or_else(|| DetectorConfig::new(model, self.seed))
    }
}

/// Flags of one detector on one cell plus its verdict file contents.
#[derive(Debug, Clone, PartialEq)]
pub struct CellVerdict {
    pub detector: Detector,
    pub cycle_index: Vec<u32>,
    pub flags: Vec<bool>,
    pub csv: Vec<u8>,
}

pub fn run_detector(
    detector: Detector,
    fm: &FeatureMatrix,
    recipe: &PipelineRecipe,
    opts: &DetectOptions,
    exec: Exec,
) -> Result<CellVerdict> {
    let mut csv = Vec::new();
    let flags = match detector {
        Detector::Stat(method) => {
            let v = stat_detect::detect_stat(fm.column(&recipe.stat_feature)?, method, &opts.stat)?;
            v.write_csv(&fm.cycle_index, &mut csv)?;
            v.flags
        }
        Detector::Distance(kind) => {
            let rows = recipe.multivariate_rows(fm)?;
            let v = dist_detect::centroid_detect(&rows, &kind.metric(opts.minkowski_p)?, opts.mad_threshold)?;
            v.write_csv(&fm.cycle_index, &mut csv)?;
            v.flags
        }
        Detector::Ml(model) => {
            let rows = recipe.multivariate_rows(fm)?;
            let (_, v) = ml::detect(&opts.config_for(model), &rows, opts.rule, exec)?;
            v.write_csv(&fm.cycle_index, &mut csv)?;
            v.flags
        }
    };
    Ok(CellVerdict {
        detector,
        cycle_index: fm.cycle_index.clone(),
        flags,
        csv,
    })
}

/// Reads `cycle_index` and `flagged` back from any verdict file.
pub fn read_verdict_flags(text: &str) -> Result<Vec<(u32, bool)>> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::EmptyInput("verdict file has no header".into()))?
        .split(',')
        .collect();
    let col = |name: &'static str| {
        header.iter().position(|h| *h == name).ok_or(Error::MissingColumn {
            role: name,
            column: name.to_string(),
        })
    };
    let (ci, fi) = (col("cycle_index")?, col("flagged")?);
    lines
        .enumerate()
        .map(|(row, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let parse_err = |column: &str, value: &str| Error::Parse {
                row: row + 1,
                column: column.to_string(),
                value: value.to_string(),
            };
            let c = f.get(ci).copied().unwrap_or("");
            let g = f.get(fi).copied().unwrap_or("");
            let cycle = c.parse::<u32>().map_err(|_| parse_err("cycle_index", c))?;
            let flag = match g {
                "0" => false,
                "1" => true,
                _ => return Err(parse_err("flagged", g)),
            };
            Ok((cycle, flag))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{default_anomalies, generate_cell, CellSpec};

    #[test]
    fn fifteen_detectors_with_unique_names() {
        let all = Detector::all();
        assert_eq!(all.len(), 15);
        let names: std::collections::BTreeSet<&str> = all.iter().map(|d| d.name()).collect();
        assert_eq!(names.len(), 15);
        for d in all {
            assert_eq!(d.name().parse::<Detector>().unwrap(), d);
        }
    }

    #[test]
    fn recipes_produce_their_columns() {
        let mut spec = CellSpec::new("c", 40, 60, 2);
        spec.anomalies = default_anomalies(40, 0.5);
        let cell = generate_cell(&spec).unwrap();
        let (fm, _) = PipelineRecipe::severson().build(&cell.records).unwrap();
        for c in ["dv_max", "dq_max", "dvdq_max", "log_dv_max", "log_dq_max", "log_dvdq_max"] {
            assert!(fm.column(c).is_ok(), "{c}");
        }
        let (fm, _) = PipelineRecipe::tohoku().build(&cell.records).unwrap();
        let m = fm.column("mahalanobis").unwrap();
        assert!(m.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(fm.column("capacity_max").is_ok());
    }

    #[test]
    fn custom_spelling_of_severson() {
        let c = PipelineRecipe::custom("dvdq_max", &["dv_max".into(), "dq_max".into()], true).unwrap();
        let s = PipelineRecipe::severson();
        assert_eq!(c.stat_feature, s.stat_feature);
        assert_eq!(c.multivariate, s.multivariate);
        assert_eq!(c.log_of, s.log_of);
        assert!(PipelineRecipe::custom("voltage", &[], false).is_err());
    }

    #[test]
    fn verdict_round_trip() {
        let mut spec = CellSpec::new("c", 30, 60, 3);
        spec.anomalies = default_anomalies(30, 0.5);
        let cell = generate_cell(&spec).unwrap();
        let recipe = PipelineRecipe::severson();
        let (fm, _) = recipe.build(&cell.records).unwrap();
        for d in Detector::all() {
            let v = run_detector(d, &fm, &recipe, &DetectOptions::default(), Exec::Sequential).unwrap();
            let back = read_verdict_flags(std::str::from_utf8(&v.csv).unwrap()).unwrap();
            assert_eq!(back.len(), 30, "{d}");
            assert!(back.iter().zip(&v.flags).all(|(a, b)| a.1 == *b));
        }
    }
}
