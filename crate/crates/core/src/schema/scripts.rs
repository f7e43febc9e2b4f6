//! Invocation of a package's preparation and grader scripts.
//!
//! `prepare.py RAW PUBLIC PRIVATE --seed N` and `metric.py SUBMISSION ANSWER`;
//! the grader exits 0 with a final `SCORE: <float>` line, 3 for a rejected
//! submission and anything else for a crash.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TaskPackage;
use crate::sandbox::{ExecOutput, ExecSpec, ExitState, Sandbox, SandboxError};
use crate::util::PathLock;

pub const EXIT_INVALID: i32 = 3;
const DETAIL_CAP: usize = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum GradeOutcome {
    Score { value: f64 },
    Rejected { message: String },
    Crashed { message: String },
    TimedOut,
}

impl GradeOutcome {
    pub fn score(&self) -> Option<f64> {
        match self {
            GradeOutcome::Score { value } => Some(*value),
            _ => None,
        }
    }
}

/// Parses the last non-empty stdout line as `SCORE: <float>`.
pub fn parse_score_line(stdout: &str) -> Option<f64> {
    let line = stdout.lines().rev().find(|l| !l.trim().is_empty())?;
    line.trim().strip_prefix("SCORE:")?.trim().parse().ok()
}

pub fn run_prepare(
    sandbox: &Sandbox,
    script: &Path,
    raw: &Path,
    public: &Path,
    private: &Path,
) -> Result<ExecOutput, SandboxError> {
    let cwd = script.parent().unwrap_or(Path::new("."));
    let spec = ExecSpec::python(script, cwd)
        .arg(raw)
        .arg(public)
        .arg(private)
        .arg("--seed")
        .arg(sandbox.seed().to_string());
    sandbox.run(&spec)
}

/// Runs a grader script without taking the package lock.
pub fn run_grader(
    sandbox: &Sandbox,
    script: &Path,
    submission: &Path,
    answer: &Path,
) -> Result<GradeOutcome, SandboxError> {
    let cwd = script.parent().unwrap_or(Path::new("."));
    let out = sandbox.run(&ExecSpec::python(script, cwd).arg(submission).arg(answer))?;
    Ok(classify(&out))
}

fn classify(out: &ExecOutput) -> GradeOutcome {
    match out.status {
        ExitState::TimedOut => GradeOutcome::TimedOut,
        ExitState::Exited(0) => match parse_score_line(&out.stdout) {
            Some(v) if v.is_finite() => GradeOutcome::Score { value: v },
            Some(v) => GradeOutcome::Crashed { message: format!("non-finite score {v}") },
            None => GradeOutcome::Crashed {
                message: format!("grader printed no SCORE line\n{}", out.summary(DETAIL_CAP)),
            },
        },
        ExitState::Exited(EXIT_INVALID) => {
            let msg = out.stderr.trim();
            let msg = msg.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or(msg);
            GradeOutcome::Rejected {
                message: msg.strip_prefix("invalid submission: ").unwrap_or(msg).to_string(),
            }
        }
        _ => GradeOutcome::Crashed { message: out.summary(DETAIL_CAP) },
    }
}

/// Grades `submission` against the package's hidden answer. Grader runs on
/// one package are serialized through a lock on the package root.
pub fn grade(pkg: &TaskPackage, sandbox: &Sandbox, submission: &Path) -> Result<GradeOutcome, SandboxError> {
    let _lock = PathLock::acquire(&pkg.root, "grader")?;
    run_grader(sandbox, &pkg.tree.metric_script, submission, &pkg.tree.test_answer)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_line_is_last_non_empty() {
        assert_eq!(parse_score_line("log\nSCORE: 0.75\n\n"), Some(0.75));
        assert_eq!(parse_score_line("SCORE: 0.1\nmore"), None);
        assert_eq!(parse_score_line("SCORE: 1e-3"), Some(0.001));
        assert_eq!(parse_score_line(""), None);
    }

    #[test]
    fn score_round_trips_bit_exact() {
        // Python prints repr(float), the shortest string that round-trips.
        for v in [0.1f64 + 0.2, 1.0 / 3.0, 6.058349919738872, 5e-324] {
            let line = format!("SCORE: {v:?}");
            assert_eq!(parse_score_line(&line).unwrap().to_bits(), v.to_bits());
        }
    }
}
