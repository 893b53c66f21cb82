use std::collections::BTreeMap;

use super::space::{Domain, SearchSpace};
use super::TrialRecord;
use crate::error::{Error, Result};
use crate::ml::{DetectorConfig, ParamValue};

/// `a` dominates `b` under per-objective directions (`true` = maximize).
pub fn dominates(a: (f64, f64), b: (f64, f64), maximize: [bool; 2]) -> bool {
    let better = |x: f64, y: f64, max: bool| if max { x >= y } else { x <= y };
    let strict = |x: f64, y: f64, max: bool| if max { x > y } else { x < y };
    better(a.0, b.0, maximize[0])
        && better(a.1, b.1, maximize[1])
        && (strict(a.0, b.0, maximize[0]) || strict(a.1, b.1, maximize[1]))
}

/// Non-dominated feasible trials, ordered by `trial_id`.
pub fn pareto_front(trials: &[TrialRecord], maximize: [bool; 2]) -> Vec<TrialRecord> {
    let feasible: Vec<&TrialRecord> = trials.iter().filter(|t| t.is_feasible()).collect();
    let mut front: Vec<TrialRecord> = feasible
        .iter()
        .filter(|t| !feasible.iter().any(|o| dominates(o.objectives, t.objectives, maximize)))
        .map(|t| (*t).clone())
        .collect();
    front.sort_by_key(|t| t.trial_id);
    front
}

fn sorted_sum(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

/// Mode with ties broken by the smallest display string.
fn mode(values: &[&ParamValue]) -> ParamValue {
    let mut counts: BTreeMap<String, (usize, &ParamValue)> = BTreeMap::new();
    for v in values {
        counts.entry(v.to_string()).or_insert((0, v)).0 += 1;
    }
    let max = counts.values().map(|c| c.0).max().unwrap_or(0);
    counts
        .values()
        .find(|c| c.0 == max)
        .map(|c| c.1.clone())
        .unwrap_or(ParamValue::Int(0))
}

/// Combines configs of one model: numeric values are averaged (integers
/// rounded half-up and clamped to the domain when one is given), anything
/// else takes the mode. The seed is the smallest one seen.
pub fn aggregate_configs_in(configs: &[DetectorConfig], space: Option<&SearchSpace>) -> Result<DetectorConfig> {
    let first = configs
        .first()
        .ok_or_else(|| Error::Aggregation("no configs to aggregate".into()))?;
    if let Some(c) = configs.iter().find(|c| c.model != first.model) {
        return Err(Error::Aggregation(format!(
            "mixed models {} and {}",
            first.model, c.model
        )));
    }
    let mut out = DetectorConfig::new(first.model, configs.iter().map(|c| c.seed).min().unwrap_or(0));
    let names: std::collections::BTreeSet<&String> = configs.iter().flat_map(|c| c.params.keys()).collect();
    for name in names {
        let values: Vec<&ParamValue> = configs.iter().filter_map(|c| c.params.get(name)).collect();
        let all_int = values.iter().all(|v| matches!(v, ParamValue::Int(_)));
        let all_num = values.iter().all(|v| matches!(v, ParamValue::Int(_) | ParamValue::Real(_)));
        let domain = space.and_then(|s| s.domains.get(name));
        let v = if all_int && !matches!(domain, Some(Domain::Categorical(_))) {
            let mean = sorted_sum(values.iter().filter_map(|v| v.as_f64()).collect()) / values.len() as f64;
            let mut r = (mean + 0.5).floor() as i64;
            if let Some(Domain::Int { lo, hi }) = domain {
                r = r.clamp(*lo, *hi);
            }
            ParamValue::Int(r)
        } else if all_num && !matches!(domain, Some(Domain::Categorical(_))) {
            let mut m = sorted_sum(values.iter().filter_map(|v| v.as_f64()).collect()) / values.len() as f64;
            if let Some(Domain::Real { lo, hi }) = domain {
                m = m.clamp(*lo, *hi);
            }
            ParamValue::Real(m)
        } else {
            mode(&values)
        };
        out.params.insert(name.clone(), v);
    }
    Ok(out)
}

pub fn aggregate_configs(configs: &[DetectorConfig]) -> Result<DetectorConfig> {
    aggregate_configs_in(configs, None)
}

/// Objective pair rounded to 6 significant digits, used as a group key.
pub fn objective_key(o: (f64, f64)) -> (String, String) {
    (format!("{:.5e}", o.0), format!("{:.5e}", o.1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Compromise {
    pub config: DetectorConfig,
    pub objectives: (f64, f64),
    pub trial_ids: Vec<usize>,
}

/// Aggregated config of the most frequent objective pair among feasible
/// trials (all trials if none is feasible). Ties go to the pair holding the
/// lowest trial id.
pub fn compromise_solution(trials: &[TrialRecord], space: Option<&SearchSpace>) -> Result<Compromise> {
    let pool: Vec<&TrialRecord> = if trials.iter().any(TrialRecord::is_feasible) {
        trials.iter().filter(|t| t.is_feasible()).collect()
    } else {
        trials.iter().collect()
    };
    let mut groups: BTreeMap<(String, String), Vec<&TrialRecord>> = BTreeMap::new();
    for t in pool {
        groups.entry(objective_key(t.objectives)).or_default().push(t);
    }
    let group = groups
        .into_values()
        .max_by(|a, b| {
            let lowest = |g: &Vec<&TrialRecord>| g.iter().map(|t| t.trial_id).min().unwrap_or(usize::MAX);
            a.len().cmp(&b.len()).then(lowest(b).cmp(&lowest(a)))
        })
        .ok_or_else(|| Error::Aggregation("no trials".into()))?;
    let mut group = group;
    group.sort_by_key(|t| t.trial_id);
    let configs: Vec<DetectorConfig> = group.iter().map(|t| t.config.clone()).collect();
    Ok(Compromise {
        config: aggregate_configs_in(&configs, space)?,
        objectives: group[0].objectives,
        trial_ids: group.iter().map(|t| t.trial_id).collect(),
    })
}
