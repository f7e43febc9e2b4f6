use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{CandidateResult, CandidateStatus};
use crate::manifest::{ManifestEvent, RunState};

/// Mean and linear-interpolated percentiles of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Distribution {
    pub count: usize,
    pub mean: f64,
    pub p50: f64,
    pub p90: f64,
    pub max: f64,
}

impl Distribution {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let pct = |q: f64| {
            let pos = q * (v.len() - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Self {
            count: v.len(),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            p50: pct(0.5),
            p90: pct(0.9),
            max: v[v.len() - 1],
        }
    }

    /// Fraction of values at or below `limit`.
    pub fn share_at_most(values: &[f64], limit: f64) -> f64 {
        if values.is_empty() {
            return f64::NAN;
        }
        values.iter().filter(|&&x| x <= limit).count() as f64 / values.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GenerationStats {
    pub datasets: usize,
    pub candidates: usize,
    pub verified: usize,
    pub assertion_verified: usize,
    pub failed: usize,
    /// Successful tasks (verified or assertion-verified) per dataset.
    pub tasks_per_dataset: f64,
    /// Retries per candidate, design and refactor combined.
    pub retries: Distribution,
    pub designer_retries: Distribution,
    pub refactor_retries: Distribution,
    /// Share of candidates whose first design attempt passed pre-refactor checks.
    pub first_try_design: f64,
    pub steps: Distribution,
    pub cost: Distribution,
    pub wall_secs: Distribution,
    /// Validation runs, in counted steps.
    pub validation_steps: Distribution,
    pub failures_by_stage: BTreeMap<String, usize>,
    pub failures_by_code: BTreeMap<String, usize>,
    /// tag name -> value -> successful task count.
    pub tags: BTreeMap<String, BTreeMap<String, usize>>,
}

pub const TAG_NAMES: [&str; 4] = ["modality", "objective", "domain", "metric"];

/// Aggregates the terminal records of a manifest.
pub fn pipeline_stats(events: &[ManifestEvent]) -> GenerationStats {
    let state = RunState::replay(events);
    let datasets: BTreeSet<&str> = events.iter().map(|e| e.dataset_id.as_str()).collect();
    let results: Vec<CandidateResult> = state
        .datasets
        .values()
        .flat_map(|d| d.candidates.values())
        .filter_map(|c| c.terminal.as_ref())
        .filter_map(|e| serde_json::from_value(e.detail.clone()).ok())
        .collect();

    let mut s = GenerationStats { datasets: datasets.len(), candidates: results.len(), ..Default::default() };
    let mut first_try = 0usize;
    for name in TAG_NAMES {
        s.tags.insert(name.to_string(), BTreeMap::new());
    }
    for r in &results {
        match &r.status {
            CandidateStatus::Verified => s.verified += 1,
            CandidateStatus::AssertionVerified => s.assertion_verified += 1,
            CandidateStatus::Failed { stage, code } => {
                s.failed += 1;
                *s.failures_by_stage.entry(stage.to_string()).or_default() += 1;
                let code = if code.is_empty() { "unknown" } else { code };
                *s.failures_by_code.entry(code.to_string()).or_default() += 1;
            }
        }
        if r.status.is_success() {
            for name in TAG_NAMES {
                let v = r.tags.get(name).map(|v| v.trim()).filter(|v| !v.is_empty()).unwrap_or("unknown");
                *s.tags.get_mut(name).expect("tag initialized").entry(v.to_string()).or_default() += 1;
            }
        }
    }
    let pre_assert_first: BTreeSet<(&str, &str)> = events
        .iter()
        .filter(|e| e.stage == crate::manifest::Stage::PreAssert)
        .fold((BTreeSet::new(), BTreeSet::new()), |(mut seen, mut ok), e| {
            let key = (e.dataset_id.as_str(), e.candidate_id.as_deref().unwrap_or(""));
            if seen.insert(key) && e.status == "ok" {
                ok.insert(key);
            }
            (seen, ok)
        })
        .1;
    for (ds, d) in &state.datasets {
        for cid in d.candidates.keys() {
            if pre_assert_first.contains(&(ds.as_str(), cid.as_str())) {
                first_try += 1;
            }
        }
    }
    let col = |f: &dyn Fn(&CandidateResult) -> f64| results.iter().map(f).collect::<Vec<f64>>();
    s.retries = Distribution::of(&col(&|r| r.retries() as f64));
    s.designer_retries = Distribution::of(&col(&|r| r.designer_attempts.saturating_sub(1) as f64));
    s.refactor_retries = Distribution::of(&col(&|r| r.refactor_attempts.saturating_sub(1) as f64));
    s.steps = Distribution::of(&col(&|r| r.steps as f64));
    s.cost = Distribution::of(&col(&|r| r.cost));
    s.wall_secs = Distribution::of(&col(&|r| r.wall_secs));
    let validation_steps: Vec<f64> = events
        .iter()
        .filter(|e| e.stage == crate::manifest::Stage::Validation)
        .filter_map(|e| e.detail.get("steps").and_then(|v| v.as_f64()))
        .collect();
    s.validation_steps = Distribution::of(&validation_steps);
    s.first_try_design = if results.is_empty() { f64::NAN } else { first_try as f64 / results.len() as f64 };
    s.tasks_per_dataset = if s.datasets == 0 {
        0.0
    } else {
        (s.verified + s.assertion_verified) as f64 / s.datasets as f64
    };
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentiles_interpolate() {
        let d = Distribution::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(d.mean, 2.5);
        assert_eq!(d.p50, 2.5);
        assert!((d.p90 - 3.7).abs() < 1e-12);
        assert_eq!(Distribution::of(&[]).count, 0);
        assert_eq!(Distribution::share_at_most(&[5.0, 15.0, 16.0], 15.0), 2.0 / 3.0);
    }
}
