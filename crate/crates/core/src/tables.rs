//! Comma-separated score and rating tables.
//!
//! Score table, one row per (task, model, run, step):
//!
//! ```text
//! task_id,model_id,run,step,raw_score,direction,category,task_set,weight,best_run
//! toy,m1,1,1,0.5,1,tabular,dojo,1,true
//! ```
//!
//! `raw_score` may be empty for a step without a score. `run`, `category`,
//! `task_set`, `weight` and `best_run` are optional on input.
//!
//! Rating table, one row per model and one column per rating set:
//!
//! ```text
//! model_id,Dojo,Smith
//! m1,1254.6,1179.7
//! ```
//!
//! Rows that do not parse are skipped; each skip yields a warning naming the
//! line number.

use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use taskforge_analytics::{Direction, RatingSets, RunTrajectory, TaskScores};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub task_id: String,
    pub model_id: String,
    pub run: usize,
    pub step: usize,
    pub raw_score: Option<f64>,
    pub direction: Direction,
    pub category: String,
    pub task_set: String,
    pub weight: f64,
    pub best_run: bool,
}

pub const SCORE_HEADER: [&str; 10] =
    ["task_id", "model_id", "run", "step", "raw_score", "direction", "category", "task_set", "weight", "best_run"];

/// A warning about an input line that was skipped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineWarning {
    pub line: u64,
    pub message: String,
}

impl std::fmt::Display for LineWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name))
}

fn parse_direction(s: &str) -> Result<Direction, String> {
    match s.trim() {
        "1" | "+1" => Ok(Direction::HigherIsBetter),
        "-1" => Ok(Direction::LowerIsBetter),
        other => crate::schema::direction_from_str(other),
    }
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "" | "0" | "false" | "no" => Ok(false),
        "1" | "true" | "yes" | "*" => Ok(true),
        other => Err(format!("not a boolean: {other:?}")),
    }
}

fn reader(input: impl io::Read) -> csv::Reader<impl io::Read> {
    csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(input)
}

pub fn read_scores(input: impl io::Read) -> io::Result<(Vec<ScoreRow>, Vec<LineWarning>)> {
    let mut rdr = reader(input);
    let headers = rdr.headers().map_err(io::Error::other)?.clone();
    let req = |name: &str| {
        column(&headers, name)
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, format!("score table lacks column {name:?}")))
    };
    let (task, model, step, score, dir) =
        (req("task_id")?, req("model_id")?, req("step")?, req("raw_score")?, req("direction")?);
    let [run, category, task_set, weight, best] =
        ["run", "category", "task_set", "weight", "best_run"].map(|n| column(&headers, n));
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for rec in rdr.records() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                warnings.push(LineWarning { line, message: e.to_string() });
                continue;
            }
        };
        let line = rec.position().map_or(0, |p| p.line());
        let get = |i: usize| rec.get(i).unwrap_or("");
        let opt = |i: Option<usize>| i.map(get).unwrap_or("");
        let parsed = (|| -> Result<ScoreRow, String> {
            let task_id = get(task);
            let model_id = get(model);
            if task_id.is_empty() || model_id.is_empty() {
                return Err("empty task_id or model_id".into());
            }
            let step: usize = get(step).parse().map_err(|_| format!("bad step {:?}", get(step)))?;
            if step == 0 {
                return Err("steps are numbered from 1".into());
            }
            let raw = get(score);
            let raw_score = match raw.to_ascii_lowercase().as_str() {
                "" | "na" | "nan" | "null" => None,
                _ => {
                    let v: f64 = raw.parse().map_err(|_| format!("bad raw_score {raw:?}"))?;
                    v.is_finite().then_some(v)
                }
            };
            let run = match opt(run) {
                "" => 1,
                s => s.parse().map_err(|_| format!("bad run {s:?}"))?,
            };
            let weight = match opt(weight) {
                "" => 1.0,
                s => s.parse::<f64>().ok().filter(|w| w.is_finite() && *w >= 0.0).ok_or(format!("bad weight {s:?}"))?,
            };
            Ok(ScoreRow {
                task_id: task_id.into(),
                model_id: model_id.into(),
                run,
                step,
                raw_score,
                direction: parse_direction(get(dir))?,
                category: opt(category).into(),
                task_set: opt(task_set).into(),
                weight,
                best_run: parse_bool(opt(best))?,
            })
        })();
        match parsed {
            Ok(row) => rows.push(row),
            Err(message) => warnings.push(LineWarning { line, message }),
        }
    }
    Ok((rows, warnings))
}

pub fn read_scores_file(path: &Path) -> io::Result<(Vec<ScoreRow>, Vec<LineWarning>)> {
    read_scores(std::fs::File::open(path)?)
}

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

pub fn write_scores(out: impl io::Write, rows: &[ScoreRow]) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SCORE_HEADER)?;
    for r in rows {
        w.write_record([
            r.task_id.clone(),
            r.model_id.clone(),
            r.run.to_string(),
            r.step.to_string(),
            r.raw_score.map(fmt_f64).unwrap_or_default(),
            r.direction.sign().to_string(),
            r.category.clone(),
            r.task_set.clone(),
            fmt_f64(r.weight),
            r.best_run.to_string(),
        ])?;
    }
    w.flush()
}

/// All steps of one (task, model, run).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRun {
    pub task_id: String,
    pub model_id: String,
    pub run: usize,
    pub direction: Direction,
    pub category: String,
    pub task_set: String,
    pub weight: f64,
    pub marked_best: bool,
    /// Index `s - 1` holds step `s`.
    pub scores: Vec<Option<f64>>,
}

impl ScoredRun {
    pub fn best(&self) -> Option<f64> {
        self.scores.iter().flatten().copied().reduce(|a, b| self.direction.best(a, b))
    }

    pub fn trajectory(&self, steps: usize) -> RunTrajectory {
        RunTrajectory::new(&self.task_id, &self.model_id, self.direction, self.scores.iter().copied(), steps)
    }
}

/// Groups rows into runs, ordered by (task, model, run).
pub fn group_runs(rows: &[ScoreRow]) -> Vec<ScoredRun> {
    let mut runs: BTreeMap<(&str, &str, usize), ScoredRun> = BTreeMap::new();
    for r in rows {
        let run = runs.entry((&r.task_id, &r.model_id, r.run)).or_insert_with(|| ScoredRun {
            task_id: r.task_id.clone(),
            model_id: r.model_id.clone(),
            run: r.run,
            direction: r.direction,
            category: r.category.clone(),
            task_set: r.task_set.clone(),
            weight: r.weight,
            marked_best: false,
            scores: Vec::new(),
        });
        if run.scores.len() < r.step {
            run.scores.resize(r.step, None);
        }
        run.scores[r.step - 1] = r.raw_score;
        run.marked_best |= r.best_run;
    }
    runs.into_values().collect()
}

/// Index of the best run per (task, model): an explicitly marked run wins,
/// otherwise the run with the best score, the earlier run on ties.
pub fn best_runs(runs: &[ScoredRun]) -> Vec<&ScoredRun> {
    let mut best: BTreeMap<(&str, &str), &ScoredRun> = BTreeMap::new();
    for r in runs {
        let key = (r.task_id.as_str(), r.model_id.as_str());
        match best.get(&key) {
            None => {
                best.insert(key, r);
            }
            Some(cur) => {
                let better = match (cur.marked_best, r.marked_best) {
                    (false, true) => true,
                    (true, false) => false,
                    _ => match (cur.best(), r.best()) {
                        (None, Some(_)) => true,
                        (Some(a), Some(b)) => r.direction.better(b, a),
                        _ => false,
                    },
                };
                if better {
                    best.insert(key, r);
                }
            }
        }
    }
    best.into_values().collect()
}

/// Per-task final scores of the given runs, for pairwise outcomes.
pub fn task_scores<'a>(runs: impl IntoIterator<Item = &'a ScoredRun>) -> Vec<TaskScores> {
    let mut tasks: BTreeMap<&str, TaskScores> = BTreeMap::new();
    for r in runs {
        let t = tasks.entry(&r.task_id).or_insert_with(|| {
            let mut t = TaskScores::new(&r.task_id, r.direction);
            t.weight = r.weight;
            t
        });
        t.scores.insert(r.model_id.clone(), r.best());
    }
    tasks.into_values().collect()
}

pub fn task_sets(runs: &[&ScoredRun]) -> BTreeSet<String> {
    runs.iter().filter(|r| !r.task_set.is_empty()).map(|r| r.task_set.clone()).collect()
}

pub fn read_ratings(input: impl io::Read) -> io::Result<(RatingSets, Vec<LineWarning>)> {
    let mut rdr = reader(input);
    let headers = rdr.headers().map_err(io::Error::other)?.clone();
    let model = column(&headers, "model_id")
        .or_else(|| column(&headers, "model"))
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "rating table lacks a model_id column"))?;
    let set_cols: Vec<(usize, String)> =
        headers.iter().enumerate().filter(|(i, _)| *i != model).map(|(i, h)| (i, h.to_string())).collect();
    if set_cols.is_empty() {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "rating table has no rating columns"));
    }
    let mut sets = RatingSets {
        models: Vec::new(),
        sets: set_cols.iter().map(|(_, n)| (n.clone(), Vec::new())).collect(),
    };
    let mut warnings = Vec::new();
    for rec in rdr.records() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                warnings.push(LineWarning { line: e.position().map_or(0, |p| p.line()), message: e.to_string() });
                continue;
            }
        };
        let line = rec.position().map_or(0, |p| p.line());
        let name = rec.get(model).unwrap_or("");
        if name.is_empty() {
            warnings.push(LineWarning { line, message: "empty model_id".into() });
            continue;
        }
        if sets.models.iter().any(|m| m == name) {
            warnings.push(LineWarning { line, message: format!("duplicate model {name:?}") });
            continue;
        }
        let values: Result<Vec<f64>, String> = set_cols
            .iter()
            .map(|(i, h)| {
                let s = rec.get(*i).unwrap_or("");
                s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or(format!("bad {h} rating {s:?}"))
            })
            .collect();
        match values {
            Ok(values) => {
                sets.models.push(name.to_string());
                for ((_, col), v) in sets.sets.iter_mut().zip(values) {
                    col.push(v);
                }
            }
            Err(message) => warnings.push(LineWarning { line, message }),
        }
    }
    Ok((sets, warnings))
}

pub fn read_ratings_file(path: &Path) -> io::Result<(RatingSets, Vec<LineWarning>)> {
    read_ratings(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scores_round_trip_and_skip_bad_lines() {
        let text = "task_id,model_id,run,step,raw_score,direction\n\
                    t,a,1,1,0.5,1\n\
                    t,a,1,2,,1\n\
                    t,a,x,3,0.7,1\n\
                    t,b,1,1,0.2,sideways\n\
                    t,b,2,1,0.9,higher\n";
        let (rows, warnings) = read_scores(text.as_bytes()).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[1].raw_score, None);
        assert_eq!(warnings.iter().map(|w| w.line).collect::<Vec<_>>(), [4, 5]);
        let mut buf = Vec::new();
        write_scores(&mut buf, &rows).unwrap();
        let (again, w) = read_scores(buf.as_slice()).unwrap();
        assert!(w.is_empty());
        assert_eq!(again, rows);
    }

    #[test]
    fn best_run_selection() {
        let row = |run, step, v: Option<f64>, dir, best| ScoreRow {
            task_id: "t".into(),
            model_id: "m".into(),
            run,
            step,
            raw_score: v,
            direction: dir,
            category: String::new(),
            task_set: String::new(),
            weight: 1.0,
            best_run: best,
        };
        let lo = Direction::LowerIsBetter;
        let rows = [row(1, 1, Some(3.0), lo, false), row(2, 1, Some(5.0), lo, false), row(2, 2, Some(2.0), lo, false)];
        let runs = group_runs(&rows);
        assert_eq!(best_runs(&runs)[0].run, 2);
        let rows = [row(1, 1, Some(3.0), lo, true), row(2, 1, Some(2.0), lo, false)];
        assert_eq!(best_runs(&group_runs(&rows))[0].run, 1);
        let rows = [row(1, 1, Some(3.0), lo, false), row(2, 1, Some(3.0), lo, false)];
        assert_eq!(best_runs(&group_runs(&rows))[0].run, 1);
    }

    #[test]
    fn ratings_with_bad_row() {
        let text = "model_id,A,B\nm1,1,2\nm2,x,3\nm3,4,5\nm1,0,0\n";
        let (sets, w) = read_ratings(text.as_bytes()).unwrap();
        assert_eq!(sets.models, ["m1", "m3"]);
        assert_eq!(sets.set("B"), Some(&[2.0, 5.0][..]));
        assert_eq!(w.iter().map(|w| w.line).collect::<Vec<_>>(), [3, 5]);
    }
}
