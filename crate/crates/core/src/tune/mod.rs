//! Hyperparameter tuning: TPE search over two objectives, Pareto
//! bookkeeping and the two strategies. Transfer tuning maximizes recall and
//! precision against labels on every training cell and averages the
//! per-cell bests. Proxy tuning needs no labels: it minimizes the loss of a
//! quadratic trend fitted to the predicted inliers while maximizing their
//! count, and picks the most frequent objective pair as the compromise.

use std::collections::BTreeSet;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval;
use crate::exec::{derive_seed, stable_hash, Exec};
use crate::linalg;
use crate::ml::{self, DetectorConfig, FlagRule, ProbabilityVerdict};
use crate::stats;

mod pareto;
mod space;
mod tpe;

pub use pareto::{
    aggregate_configs, aggregate_configs_in, compromise_solution, dominates, objective_key, pareto_front,
    Compromise,
};
pub use space::{Domain, SearchSpace};
pub use tpe::{random_config, scalarize, tpe_propose, GAMMA, N_CANDIDATES, N_STARTUP};

pub const DEFAULT_TRIALS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    /// (recall, precision), both maximized.
    RecallPrecision,
    /// (regression loss, inlier count), minimized and maximized.
    LossInlierCount,
}

impl ObjectiveKind {
    pub fn maximize(self) -> [bool; 2] {
        match self {
            ObjectiveKind::RecallPrecision => [true, true],
            ObjectiveKind::LossInlierCount => [false, true],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::RecallPrecision => "recall_precision",
            ObjectiveKind::LossInlierCount => "loss_inliercount",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: usize,
    pub config: DetectorConfig,
    pub objectives: (f64, f64),
    pub kind: ObjectiveKind,
    /// Why the trial is infeasible, if it is.
    pub note: Option<String>,
}

impl TrialRecord {
    pub fn is_feasible(&self) -> bool {
        self.note.is_none() && self.objectives.0.is_finite() && self.objectives.1.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuneSettings {
    pub n_trials: usize,
    pub seed: u64,
    pub rule: FlagRule,
    pub exec: Exec,
}

impl TuneSettings {
    pub fn new(n_trials: usize, seed: u64) -> Self {
        TuneSettings {
            n_trials,
            seed,
            rule: FlagRule::default(),
            exec: Exec::default(),
        }
    }
}

fn infeasible(kind: ObjectiveKind) -> (f64, f64) {
    match kind {
        ObjectiveKind::RecallPrecision => (0.0, 0.0),
        ObjectiveKind::LossInlierCount => (f64::INFINITY, 0.0),
    }
}

/// Runs trials sequentially. A finite space no larger than the budget is
/// enumerated instead of sampled. Objective errors are recorded as
/// infeasible trials with a note.
pub fn run_trials<F>(space: &SearchSpace, kind: ObjectiveKind, settings: &TuneSettings, mut objective: F) -> Vec<TrialRecord>
where
    F: FnMut(&DetectorConfig) -> Result<(f64, f64)>,
{
    let enumerated = space
        .cardinality()
        .filter(|&c| c <= settings.n_trials as u64)
        .and_then(|_| space.enumerate());
    let n = enumerated.as_ref().map_or(settings.n_trials, Vec::len);
    let mut history: Vec<TrialRecord> = Vec::with_capacity(n);
    for trial_id in 0..n {
        let config = match &enumerated {
            Some(all) => all[trial_id].clone(),
            None => tpe_propose(&history, space, derive_seed(settings.seed, &[trial_id as u64])),
        };
        let (objectives, note) = match objective(&config) {
            Ok(o) => (o, None),
            Err(e) => (infeasible(kind), Some(e.to_string())),
        };
        history.push(TrialRecord {
            trial_id,
            config,
            objectives,
            kind,
            note,
        });
    }
    history
}

/// Quadratic trend of every feature column against the (standardized)
/// cycle index, fitted on unflagged rows. Returns the mean of per-column
/// MSEs and the inlier count.
pub fn regression_proxy_objectives(cycle_index: &[u32], rows: &[Vec<f64>], flags: &[bool]) -> Result<(f64, usize)> {
    if cycle_index.len() != rows.len() || rows.len() != flags.len() {
        return Err(Error::Shape("cycle index, rows and flags differ in length".into()));
    }
    let inliers: Vec<usize> = (0..rows.len()).filter(|&i| !flags[i]).collect();
    if inliers.len() < 3 {
        return Err(Error::InsufficientInliers(inliers.len()));
    }
    let t: Vec<f64> = inliers.iter().map(|&i| f64::from(cycle_index[i])).collect();
    let (mu, sd) = (stats::mean(&t), stats::sample_std(&t));
    let z: Vec<f64> = t.iter().map(|x| if sd > 0.0 { (x - mu) / sd } else { 0.0 }).collect();
    let a = DMatrix::from_fn(z.len(), 3, |i, j| z[i].powi(j as i32));
    let d = rows[0].len();
    let mut total = 0.0;
    for col in 0..d {
        let b = DVector::from_iterator(inliers.len(), inliers.iter().map(|&i| rows[i][col]));
        let beta = linalg::lstsq(&a, &b)
            .ok_or_else(|| Error::SingularCovariance("proxy regression failed".into()))?;
        let resid = &a * beta - &b;
        total += resid.norm_squared() / inliers.len() as f64;
    }
    Ok((total / d as f64, inliers.len()))
}

fn flags_for(config: &DetectorConfig, rows: &[Vec<f64>], rule: FlagRule, exec: Exec) -> Result<Vec<bool>> {
    let (_, verdict): (_, ProbabilityVerdict) = ml::detect(config, rows, rule, exec)?;
    Ok(verdict.flags)
}

/// Labeled training cell for transfer tuning.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCell {
    pub cell_id: String,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellTuning {
    pub cell_id: String,
    pub trials: Vec<TrialRecord>,
    pub front: Vec<TrialRecord>,
    pub best: TrialRecord,
    pub perfect_recall_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferOutcome {
    pub cells: Vec<CellTuning>,
    pub aggregate: DetectorConfig,
    /// Over all trials of all cells.
    pub perfect_recall_fraction: f64,
}

/// Highest recall, then precision, then lowest trial id.
fn best_of(front: &[TrialRecord]) -> Option<&TrialRecord> {
    front.iter().max_by(|a, b| {
        a.objectives
            .0
            .total_cmp(&b.objectives.0)
            .then(a.objectives.1.total_cmp(&b.objectives.1))
            .then(b.trial_id.cmp(&a.trial_id))
    })
}

fn cell_seed(seed: u64, cell: &str, space: &SearchSpace) -> u64 {
    derive_seed(seed, &[stable_hash(cell), space.model.id()])
}

pub fn optimize_transfer(cells: &[LabeledCell], space: &SearchSpace, settings: &TuneSettings) -> Result<TransferOutcome> {
    if cells.is_empty() {
        return Err(Error::EmptyInput("no training cells".into()));
    }
    space.validate()?;
    for c in cells {
        if c.labels.len() != c.rows.len() {
            return Err(Error::Shape(format!("cell `{}`: labels and rows differ", c.cell_id)));
        }
        if !c.labels.contains(&1) {
            return Err(Error::NoPositiveLabel(c.cell_id.clone()));
        }
    }
    let results = settings.exec.try_map_slice(cells, |cell| -> Result<CellTuning> {
        let local = TuneSettings {
            seed: cell_seed(settings.seed, &cell.cell_id, space),
            ..*settings
        };
        let trials = run_trials(space, ObjectiveKind::RecallPrecision, &local, |cfg| {
            let flags = flags_for(cfg, &cell.rows, settings.rule, settings.exec)?;
            let m = eval::metrics(&eval::confusion(&cell.labels, &flags)?)?;
            Ok((m.recall, m.precision))
        });
        let front = pareto_front(&trials, ObjectiveKind::RecallPrecision.maximize());
        let best = best_of(&front)
            .or_else(|| trials.first())
            .cloned()
            .ok_or_else(|| Error::EmptyInput("no trials".into()))?;
        let perfect = trials.iter().filter(|t| t.is_feasible() && t.objectives.0 >= 1.0).count();
        Ok(CellTuning {
            cell_id: cell.cell_id.clone(),
            perfect_recall_fraction: perfect as f64 / trials.len().max(1) as f64,
            trials,
            front,
            best,
        })
    })?;
    let bests: Vec<DetectorConfig> = results.iter().map(|c| c.best.config.clone()).collect();
    let total: usize = results.iter().map(|c| c.trials.len()).sum();
    let perfect: f64 = results
        .iter()
        .map(|c| c.perfect_recall_fraction * c.trials.len() as f64)
        .sum();
    Ok(TransferOutcome {
        aggregate: aggregate_configs_in(&bests, Some(space))?,
        perfect_recall_fraction: perfect / total.max(1) as f64,
        cells: results,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxyOutcome {
    pub trials: Vec<TrialRecord>,
    pub front: Vec<TrialRecord>,
    pub compromise: Compromise,
}

pub fn optimize_proxy(
    cell_id: &str,
    cycle_index: &[u32],
    rows: &[Vec<f64>],
    space: &SearchSpace,
    settings: &TuneSettings,
) -> Result<ProxyOutcome> {
    space.validate()?;
    let local = TuneSettings {
        seed: cell_seed(settings.seed, cell_id, space),
        ..*settings
    };
    let trials = run_trials(space, ObjectiveKind::LossInlierCount, &local, |cfg| {
        let flags = flags_for(cfg, rows, settings.rule, settings.exec)?;
        match regression_proxy_objectives(cycle_index, rows, &flags) {
            Ok((loss, count)) => Ok((loss, count as f64)),
            Err(Error::InsufficientInliers(count)) => Ok((f64::INFINITY, count as f64)),
            Err(e) => Err(e),
        }
    });
    let front = pareto_front(&trials, ObjectiveKind::LossInlierCount.maximize());
    let compromise = compromise_solution(&trials, Some(space))?;
    Ok(ProxyOutcome {
        trials,
        front,
        compromise,
    })
}

/// `trial_id,<params…>,o1,o2,kind,note` with parameters in name order.
pub fn write_trials_csv<W: Write>(trials: &[TrialRecord], out: W) -> std::io::Result<()> {
    write_trial_rows(&[(None, trials)], out)
}

/// Same as [`write_trials_csv`] with a leading `cell_id` column, for trials
/// of several cells in one file.
pub fn write_cell_trials_csv<W: Write>(groups: &[(&str, &[TrialRecord])], out: W) -> std::io::Result<()> {
    let tagged: Vec<(Option<&str>, &[TrialRecord])> = groups.iter().map(|(c, t)| (Some(*c), *t)).collect();
    write_trial_rows(&tagged, out)
}

fn write_trial_rows<W: Write>(groups: &[(Option<&str>, &[TrialRecord])], mut out: W) -> std::io::Result<()> {
    let tagged = groups.iter().any(|g| g.0.is_some());
    let names: BTreeSet<&String> = groups
        .iter()
        .flat_map(|g| g.1.iter().flat_map(|t| t.config.params.keys()))
        .collect();
    let mut header = if tagged { vec!["cell_id".to_string()] } else { Vec::new() };
    header.push("trial_id".to_string());
    header.extend(names.iter().map(|s| s.to_string()));
    header.extend(["o1", "o2", "kind", "note"].map(String::from));
    writeln!(out, "{}", header.join(","))?;
    for (t, cell) in groups.iter().flat_map(|(c, ts)| ts.iter().map(move |t| (t, *c))) {
        let mut row: Vec<String> = cell.map(String::from).into_iter().collect();
        row.push(t.trial_id.to_string());
        for n in &names {
            row.push(t.config.params.get(*n).map_or_else(String::new, |v| v.to_string()));
        }
        row.push(t.objectives.0.to_string());
        row.push(t.objectives.1.to_string());
        row.push(t.kind.name().to_string());
        row.push(t.note.as_deref().unwrap_or("").replace([',', '\n'], ";"));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
