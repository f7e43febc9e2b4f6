//! Pairwise outcomes between models on shared tasks.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::Direction;

/// Final raw score of every model on one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScores {
    pub task_id: String,
    pub direction: Direction,
    /// Sample weight of the task; 1 by default.
    pub weight: f64,
    pub scores: BTreeMap<String, Option<f64>>,
}

impl TaskScores {
    pub fn new(task_id: impl Into<String>, direction: Direction) -> Self {
        Self {
            task_id: task_id.into(),
            direction,
            weight: 1.0,
            scores: BTreeMap::new(),
        }
    }

    pub fn with(mut self, model: impl Into<String>, score: Option<f64>) -> Self {
        self.scores.insert(model.into(), score);
        self
    }
}

/// Outcome counts for one model pair. `model_a < model_b` lexicographically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairOutcome {
    pub task_id: String,
    pub model_a: String,
    pub model_b: String,
    pub wins_a: u32,
    pub wins_b: u32,
    pub ties: u32,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OutcomeTable {
    /// Every model seen, sorted.
    pub models: Vec<String>,
    pub records: Vec<PairOutcome>,
    /// `(task, model_a, model_b)` triples skipped because a score was missing.
    pub skipped: Vec<(String, String, String)>,
}

impl OutcomeTable {
    /// Adds a record, registering both models. The pair is reordered so that
    /// `model_a < model_b`.
    pub fn push(&mut self, mut rec: PairOutcome) {
        if rec.model_a > rec.model_b {
            std::mem::swap(&mut rec.model_a, &mut rec.model_b);
            std::mem::swap(&mut rec.wins_a, &mut rec.wins_b);
        }
        for m in [&rec.model_a, &rec.model_b] {
            if let Err(pos) = self.models.binary_search(m) {
                self.models.insert(pos, m.clone());
            }
        }
        self.records.push(rec);
    }

    /// Registers a model that may have no comparisons.
    pub fn add_model(&mut self, model: impl Into<String>) {
        let m = model.into();
        if let Err(pos) = self.models.binary_search(&m) {
            self.models.insert(pos, m);
        }
    }

    /// Convenience constructor for `count` weight-1 records of one outcome
    /// kind between `a` and `b`.
    pub fn record(&mut self, a: &str, b: &str, wins_a: u32, wins_b: u32, ties: u32) {
        self.push(PairOutcome {
            task_id: format!("task-{}", self.records.len()),
            model_a: a.to_string(),
            model_b: b.to_string(),
            wins_a,
            wins_b,
            ties,
            weight: 1.0,
        });
    }

    pub fn index_of(&self, model: &str) -> Option<usize> {
        self.models.binary_search_by(|m| m.as_str().cmp(model)).ok()
    }

    /// Effective (tie-split, weighted) win totals `a[i][j]` of `i` over `j`.
    pub fn effective_wins(&self) -> Vec<Vec<f64>> {
        let n = self.models.len();
        let mut a = vec![vec![0.0; n]; n];
        for r in &self.records {
            let (Some(i), Some(j)) = (self.index_of(&r.model_a), self.index_of(&r.model_b)) else {
                continue;
            };
            let half = 0.5 * r.ties as f64;
            a[i][j] += r.weight * (r.wins_a as f64 + half);
            a[j][i] += r.weight * (r.wins_b as f64 + half);
        }
        a
    }
}

/// Direction-aware comparison of every model pair on every task.
///
/// Pairs where either score is missing (or non-finite) are skipped and
/// listed in [`OutcomeTable::skipped`].
pub fn pairwise_outcomes(tasks: &[TaskScores]) -> OutcomeTable {
    let mut table = OutcomeTable::default();
    let models: BTreeSet<&String> = tasks.iter().flat_map(|t| t.scores.keys()).collect();
    table.models = models.into_iter().cloned().collect();

    for task in tasks {
        let entries: Vec<(&String, Option<f64>)> = task
            .scores
            .iter()
            .map(|(m, s)| (m, s.filter(|v| v.is_finite())))
            .collect();
        for (idx, (ma, sa)) in entries.iter().enumerate() {
            for (mb, sb) in &entries[idx + 1..] {
                let (Some(sa), Some(sb)) = (sa, sb) else {
                    table
                        .skipped
                        .push((task.task_id.clone(), (*ma).clone(), (*mb).clone()));
                    continue;
                };
                let (wins_a, wins_b, ties) = if task.direction.better(*sa, *sb) {
                    (1, 0, 0)
                } else if task.direction.better(*sb, *sa) {
                    (0, 1, 0)
                } else {
                    (0, 0, 1)
                };
                table.records.push(PairOutcome {
                    task_id: task.task_id.clone(),
                    model_a: (*ma).clone(),
                    model_b: (*mb).clone(),
                    wins_a,
                    wins_b,
                    ties,
                    weight: task.weight,
                });
            }
        }
    }
    table
}

/// Head-to-head counts and aggregate points (1 per win, 0.5 per tie).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinLossMatrix {
    pub models: Vec<String>,
    /// `wins[i][j]`: number of tasks on which `i` beat `j`.
    pub wins: Vec<Vec<u32>>,
    pub ties: Vec<Vec<u32>>,
    pub aggregate: Vec<f64>,
}

impl WinLossMatrix {
    /// Number of tasks on which `i` and `j` were compared.
    pub fn compared(&self, i: usize, j: usize) -> u32 {
        self.wins[i][j] + self.wins[j][i] + self.ties[i][j]
    }
}

pub fn win_loss_matrix(outcomes: &OutcomeTable) -> WinLossMatrix {
    let n = outcomes.models.len();
    let mut wins = vec![vec![0u32; n]; n];
    let mut ties = vec![vec![0u32; n]; n];
    for r in &outcomes.records {
        let (Some(i), Some(j)) = (outcomes.index_of(&r.model_a), outcomes.index_of(&r.model_b))
        else {
            continue;
        };
        wins[i][j] += r.wins_a;
        wins[j][i] += r.wins_b;
        ties[i][j] += r.ties;
        ties[j][i] += r.ties;
    }
    let aggregate = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| wins[i][j] as f64 + 0.5 * ties[i][j] as f64)
                .sum()
        })
        .collect();
    WinLossMatrix {
        models: outcomes.models.clone(),
        wins,
        ties,
        aggregate,
    }
}
