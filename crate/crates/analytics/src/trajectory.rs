//! Step-wise performance curves.
//!
//! A run on a task yields one raw score per code-execution step (information
//! requests are not steps). Raw scores live on task-specific scales, so each
//! (task, model) trajectory is min-max normalized over its own observed
//! entries, oriented so that 1 is the best observed score and 0 the worst.
//! Missing entries are forward-filled and the curve is closed under a prefix
//! maximum, which gives a nondecreasing best-so-far curve in `[0, 1]`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::Direction;

/// Number of steps a trajectory is padded or truncated to.
pub const DEFAULT_STEPS: usize = 10;

/// Raw per-step scores of one (task, model) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrajectory {
    pub task_id: String,
    pub model_id: String,
    pub direction: Direction,
    /// One entry per step; `None` marks a step without a score.
    pub raw: Vec<Option<f64>>,
}

impl RunTrajectory {
    /// Builds a trajectory of exactly `steps` entries, padding with missing
    /// markers or dropping steps past the horizon. Non-finite scores are
    /// treated as missing.
    pub fn new(
        task_id: impl Into<String>,
        model_id: impl Into<String>,
        direction: Direction,
        raw: impl IntoIterator<Item = Option<f64>>,
        steps: usize,
    ) -> Self {
        let mut raw: Vec<Option<f64>> = raw
            .into_iter()
            .map(|v| v.filter(|x| x.is_finite()))
            .take(steps)
            .collect();
        raw.resize(steps, None);
        Self {
            task_id: task_id.into(),
            model_id: model_id.into(),
            direction,
            raw,
        }
    }

    pub fn observed(&self) -> impl Iterator<Item = f64> + '_ {
        self.raw.iter().filter_map(|v| *v)
    }
}

/// Normalized (pre-prefix-maximum) trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedTrajectory {
    pub values: Vec<f64>,
    /// Every observed entry had the same raw score.
    pub degenerate: bool,
    /// No entry was observed; `values` is all zeros.
    pub all_missing: bool,
}

/// Direction-aware min-max normalization followed by forward fill.
///
/// Observed entries map to `(r - min) / (max - min)` for higher-is-better
/// tasks and `(max - r) / (max - min)` for lower-is-better ones. When every
/// observed entry is equal they all map to 1. A missing entry takes the value
/// of the closest observed entry before it, or 0 when there is none.
pub fn normalize_trajectory(t: &RunTrajectory) -> NormalizedTrajectory {
    let (min, max) = t
        .observed()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    if min > max {
        return NormalizedTrajectory {
            values: vec![0.0; t.raw.len()],
            degenerate: false,
            all_missing: true,
        };
    }

    let span = max - min;
    let degenerate = span == 0.0;
    let scale = |r: f64| -> f64 {
        if degenerate {
            return 1.0;
        }
        let v = match t.direction {
            Direction::HigherIsBetter => (r - min) / span,
            Direction::LowerIsBetter => (max - r) / span,
        };
        v.clamp(0.0, 1.0)
    };

    let mut last = 0.0;
    let values = t
        .raw
        .iter()
        .map(|entry| {
            if let Some(r) = entry {
                last = scale(*r);
            }
            last
        })
        .collect();

    NormalizedTrajectory {
        values,
        degenerate,
        all_missing: false,
    }
}

/// Running maximum: `y[u] = max(y[u-1], v[u])`.
pub fn best_so_far(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .scan(f64::NEG_INFINITY, |best, &v| {
            *best = best.max(v);
            Some(*best)
        })
        .collect()
}

/// A best-so-far curve tagged with the category it belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledCurve {
    pub group: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CurveSet {
    pub groups: BTreeMap<String, Vec<f64>>,
    pub overall: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Pointwise mean of curves per group and over all curves.
///
/// `declared_groups` lists groups the caller expects; any of them without a
/// member curve is left out of the result and reported in `warnings`.
/// Curves whose length differs from the first curve are skipped with a
/// warning.
pub fn average_curves(curves: &[LabeledCurve], declared_groups: &[String]) -> CurveSet {
    let mut out = CurveSet::default();
    let Some(len) = curves.first().map(|c| c.values.len()) else {
        for g in declared_groups {
            out.warnings.push(format!("group {g:?} has no curves"));
        }
        return out;
    };

    let mut sums: BTreeMap<&str, (Vec<f64>, usize)> = BTreeMap::new();
    let mut total = vec![0.0; len];
    let mut count = 0usize;
    for c in curves {
        if c.values.len() != len {
            out.warnings.push(format!(
                "curve in group {:?} has {} steps, expected {len}; skipped",
                c.group,
                c.values.len()
            ));
            continue;
        }
        let entry = sums
            .entry(c.group.as_str())
            .or_insert_with(|| (vec![0.0; len], 0));
        for (acc, v) in entry.0.iter_mut().zip(&c.values) {
            *acc += v;
        }
        entry.1 += 1;
        for (acc, v) in total.iter_mut().zip(&c.values) {
            *acc += v;
        }
        count += 1;
    }

    for g in declared_groups {
        if !sums.contains_key(g.as_str()) {
            out.warnings.push(format!("group {g:?} has no curves"));
        }
    }
    out.groups = sums
        .into_iter()
        .map(|(g, (s, n))| (g.to_string(), s.into_iter().map(|v| v / n as f64).collect()))
        .collect();
    if count > 0 {
        out.overall = total.into_iter().map(|v| v / count as f64).collect();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(direction: Direction, raw: &[Option<f64>]) -> RunTrajectory {
        RunTrajectory::new("t", "m", direction, raw.iter().copied(), raw.len())
    }

    #[test]
    fn higher_is_better_min_max() {
        let t = traj(Direction::HigherIsBetter, &[Some(0.5), Some(0.7), Some(0.6)]);
        let n = normalize_trajectory(&t);
        let expected = [0.0, 1.0, 0.5];
        for (a, b) in n.values.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{:?}", n.values);
        }
    }

    #[test]
    fn lower_is_better_min_max() {
        let t = traj(Direction::LowerIsBetter, &[Some(0.5), Some(0.7), Some(0.6)]);
        let n = normalize_trajectory(&t);
        let expected = [1.0, 0.0, 0.5];
        for (a, b) in n.values.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{:?}", n.values);
        }
    }

    #[test]
    fn constant_observations_map_to_one() {
        let t = traj(Direction::HigherIsBetter, &[Some(0.4), Some(0.4)]);
        let n = normalize_trajectory(&t);
        assert_eq!(n.values, vec![1.0, 1.0]);
        assert!(n.degenerate);
    }

    #[test]
    fn degenerate_leading_missing_is_zero() {
        let t = traj(Direction::HigherIsBetter, &[None, Some(0.4), None]);
        let n = normalize_trajectory(&t);
        assert_eq!(n.values, vec![0.0, 1.0, 1.0]);
    }

    #[test]
    fn forward_fill_uses_last_observation() {
        let t = traj(
            Direction::HigherIsBetter,
            &[None, Some(1.0), None, Some(3.0), Some(2.0), None],
        );
        let n = normalize_trajectory(&t);
        assert_eq!(n.values, vec![0.0, 0.0, 0.0, 1.0, 0.5, 0.5]);
    }

    #[test]
    fn all_missing_is_all_zero() {
        let t = traj(Direction::LowerIsBetter, &[None, None, None]);
        let n = normalize_trajectory(&t);
        assert!(n.all_missing);
        assert_eq!(n.values, vec![0.0; 3]);
    }

    #[test]
    fn padding_and_truncation() {
        let t = RunTrajectory::new("t", "m", Direction::HigherIsBetter, [Some(1.0)], 4);
        assert_eq!(t.raw, vec![Some(1.0), None, None, None]);
        let t = RunTrajectory::new("t", "m", Direction::HigherIsBetter, vec![Some(1.0); 12], 10);
        assert_eq!(t.raw.len(), 10);
        let t = RunTrajectory::new("t", "m", Direction::HigherIsBetter, [Some(f64::NAN)], 1);
        assert_eq!(t.raw, vec![None]);
    }

    #[test]
    fn prefix_maximum() {
        assert_eq!(best_so_far(&[0.0, 1.0, 0.5]), vec![0.0, 1.0, 1.0]);
        assert_eq!(best_so_far(&[0.2, 0.2, 0.6]), vec![0.2, 0.2, 0.6]);
        assert_eq!(best_so_far(&[0.0; 4]), vec![0.0; 4]);
        assert!(best_so_far(&[]).is_empty());
    }

    #[test]
    fn averaging() {
        let same = vec![
            LabeledCurve { group: "a".into(), values: vec![0.2, 0.4] },
            LabeledCurve { group: "a".into(), values: vec![0.2, 0.4] },
        ];
        assert_eq!(average_curves(&same, &[]).overall, vec![0.2, 0.4]);

        let mixed = vec![
            LabeledCurve { group: "a".into(), values: vec![0.0, 1.0] },
            LabeledCurve { group: "b".into(), values: vec![1.0, 1.0] },
        ];
        let set = average_curves(&mixed, &[]);
        assert_eq!(set.overall, vec![0.5, 1.0]);
        assert_eq!(set.groups["a"], vec![0.0, 1.0]);
        assert_eq!(set.groups["b"], vec![1.0, 1.0]);
    }

    #[test]
    fn empty_declared_group_is_omitted_with_warning() {
        let curves = vec![LabeledCurve { group: "tabular".into(), values: vec![1.0] }];
        let set = average_curves(&curves, &["tabular".into(), "audio".into()]);
        assert!(set.groups.contains_key("tabular"));
        assert!(!set.groups.contains_key("audio"));
        assert_eq!(set.warnings.len(), 1);
        assert!(set.warnings[0].contains("audio"));
    }
}
