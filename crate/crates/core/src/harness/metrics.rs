//! Learning-curve summaries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `(step, reward)` points with strictly increasing steps.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub points: Vec<(u64, f64)>,
}

impl LearningCurve {
    pub fn new(points: Vec<(u64, f64)>) -> Result<Self> {
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Input("curve steps must increase strictly".into()));
        }
        if points.iter().any(|p| !(0.0..=1.0).contains(&p.1)) {
            return Err(Error::Input("curve rewards must lie in [0, 1]".into()));
        }
        Ok(Self { points })
    }

    /// Trailing mean over the points within `window` steps of each point
    /// (the point itself included).
    pub fn smoothed(&self, window: u64) -> Self {
        let p = &self.points;
        let points = (0..p.len())
            .map(|k| {
                let lo = p[..=k].iter().position(|q| q.0 + window > p[k].0).unwrap_or(k);
                let mean = p[lo..=k].iter().map(|q| q.1).sum::<f64>() / (k - lo + 1) as f64;
                (p[k].0, mean)
            })
            .collect();
        Self { points }
    }

    /// Points with step at most `horizon`.
    pub fn truncated(&self, horizon: u64) -> Self {
        Self {
            points: self.points.iter().copied().filter(|p| p.0 <= horizon).collect(),
        }
    }

    pub fn last(&self) -> Option<f64> {
        self.points.last().map(|p| p.1)
    }

    /// First step whose value reaches `level`.
    pub fn first_reaching(&self, level: f64) -> Option<u64> {
        self.points.iter().find(|p| p.1 >= level).map(|p| p.0)
    }
}

/// Trapezoidal area under the curve.
pub fn auc(curve: &LearningCurve) -> Result<f64> {
    let p = &curve.points;
    if p.len() < 2 {
        return Err(Error::Input(format!("auc needs at least 2 points, got {}", p.len())));
    }
    Ok(p.windows(2)
        .map(|w| (w[1].0 - w[0].0) as f64 * (w[0].1 + w[1].1) / 2.0)
        .sum())
}

/// Per-module mean over tasks of `AUC / max AUC on that task`. `aucs` maps
/// module → task → AUC.
pub fn ta_n_auc(aucs: &BTreeMap<String, BTreeMap<String, f64>>) -> Result<BTreeMap<String, f64>> {
    let tasks: Vec<&String> = match aucs.values().next() {
        Some(t) => t.keys().collect(),
        None => return Err(Error::Input("ta_n_auc of no modules".into())),
    };
    if tasks.is_empty() {
        return Err(Error::Input("ta_n_auc of no tasks".into()));
    }
    let mut best = BTreeMap::new();
    for (module, per_task) in aucs {
        for task in &tasks {
            let a = per_task
                .get(*task)
                .ok_or_else(|| Error::Input(format!("module `{module}` has no curve for task `{task}`")))?;
            let b = best.entry(*task).or_insert(f64::NEG_INFINITY);
            *b = f64::max(*b, *a);
        }
        if per_task.len() != tasks.len() {
            return Err(Error::Input(format!("module `{module}` has curves for unknown tasks")));
        }
    }
    for (task, b) in &best {
        if *b <= 0.0 {
            return Err(Error::Input(format!("task `{task}` has no positive AUC")));
        }
    }
    Ok(aucs
        .iter()
        .map(|(module, per_task)| {
            let s: f64 = tasks.iter().map(|t| per_task[*t] / best[t]).sum();
            (module.clone(), s / tasks.len() as f64)
        })
        .collect())
}

fn matched(a: &LearningCurve, b: &LearningCurve) -> Result<()> {
    let sa: Vec<u64> = a.points.iter().map(|p| p.0).collect();
    let sb: Vec<u64> = b.points.iter().map(|p| p.0).collect();
    if sa != sb {
        return Err(Error::Input("switch and scratch curves cover different steps".into()));
    }
    Ok(())
}

/// `(AUC(switch) − AUC(scratch)) / AUC(scratch)`.
pub fn rgain(switch: &LearningCurve, scratch: &LearningCurve) -> Result<f64> {
    matched(switch, scratch)?;
    let base = auc(scratch)?;
    if base <= 0.0 {
        return Err(Error::Input("scratch curve has zero area".into()));
    }
    Ok((auc(switch)? - base) / base)
}

/// Largest advantage `switch(t) − scratch(t)` divided by the step where it
/// first occurs; 0 when the switch curve never leads.
pub fn tgain(switch: &LearningCurve, scratch: &LearningCurve) -> Result<f64> {
    matched(switch, scratch)?;
    let mut best: Option<(f64, u64)> = None;
    for (s, b) in switch.points.iter().zip(&scratch.points) {
        let d = s.1 - b.1;
        if best.is_none_or(|(m, _)| d > m) {
            best = Some((d, s.0));
        }
    }
    match best {
        Some((d, t)) if d > 0.0 => {
            if t == 0 {
                return Err(Error::Input("largest advantage at step 0 has no rate".into()));
            }
            Ok(d / t as f64)
        }
        _ => Ok(0.0),
    }
}
