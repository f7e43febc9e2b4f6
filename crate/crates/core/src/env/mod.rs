//! Interactive task environment with two verbs: `request_info` (free) and
//! `execute_code` (one budget step).
//!
//! Agent code runs with the session workspace as working directory. The
//! workspace holds a copy of the package's public files under `public/`;
//! a submission is picked up from `submission.csv` whenever a step writes it.

mod agents;
mod protocol;

pub use agents::{run_evaluation, run_validation_agent, EnvTools, EvaluationRun, ValidationOutcome};
pub use protocol::{serve, Request, Response};

use std::fs;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use serde::{Deserialize, Serialize};

use crate::sandbox::{ExecSpec, Policy, Sandbox, SandboxError};
use crate::schema::{grade, GradeOutcome};
use crate::schema::TaskPackage;

pub const SUBMISSION_FILE: &str = "submission.csv";
pub const PUBLIC_DIR: &str = "public";
pub const INFO_KEYS: [&str; 3] = ["overview", "data_structure", "sample_submission"];

const PAYLOAD_CAP: usize = 4096;
const SAMPLE_ROWS: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("package not ready: {0}")]
    Precondition(String),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("backend: {0}")]
    Backend(#[from] crate::agent::BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeedbackKind {
    Info,
    ValidationError,
    RuntimeError,
    Score,
}

impl FeedbackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeedbackKind::Info => "info",
            FeedbackKind::ValidationError => "validation-error",
            FeedbackKind::RuntimeError => "runtime-error",
            FeedbackKind::Score => "score",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionFeedback {
    pub kind: FeedbackKind,
    pub payload: String,
    /// Present iff `kind` is `score`; always finite.
    pub raw_score: Option<f64>,
    /// Code steps consumed so far, including this one.
    pub step_index: usize,
    /// Whether this record consumed a budget step.
    pub counted: bool,
    /// Seconds.
    pub wall_time: f64,
}

impl ExecutionFeedback {
    fn new(kind: FeedbackKind, payload: impl Into<String>, step_index: usize, counted: bool) -> Self {
        Self { kind, payload: payload.into(), raw_score: None, step_index, counted, wall_time: 0.0 }
    }

    /// Text fed back to an agent.
    pub fn render(&self, step_budget: usize) -> String {
        let mut out = format!("[{}] step {}/{}", self.kind.as_str(), self.step_index, step_budget);
        if let Some(s) = self.raw_score {
            out.push_str(&format!(" score={s}"));
        }
        out.push('\n');
        out.push_str(&self.payload);
        out
    }
}

pub struct EnvSession {
    pub task: TaskPackage,
    pub step_count: usize,
    pub step_budget: usize,
    pub history: Vec<ExecutionFeedback>,
    pub best_raw_score: Option<f64>,
    sandbox: Sandbox,
    workspace: tempfile::TempDir,
    code_dir: PathBuf,
    deny: Vec<PathBuf>,
}

fn stamp(path: &Path) -> Option<(SystemTime, u64)> {
    let m = fs::metadata(path).ok()?;
    Some((m.modified().ok()?, m.len()))
}

fn head_lines(path: &Path, n: usize) -> std::io::Result<String> {
    let text = fs::read_to_string(path)?;
    let mut out: Vec<&str> = text.lines().take(n + 1).collect();
    let total = text.lines().count();
    let extra = total.saturating_sub(out.len());
    if extra > 0 {
        out.push("...");
    }
    let mut s = out.join("\n");
    if extra > 0 {
        s.push_str(&format!("\n({total} lines in total)"));
    }
    Ok(s)
}

impl EnvSession {
    /// Opens a session over a prepared package. Only the public files are
    /// copied into the session workspace; the package root and the private
    /// directory are unreadable from agent code.
    pub fn open(task: TaskPackage, step_budget: usize, sandbox: &Sandbox) -> Result<Self, EnvError> {
        let tree = &task.tree;
        if !tree.public_dir.is_dir() {
            return Err(EnvError::Precondition(format!("{} does not exist", tree.public_dir.display())));
        }
        if !tree.sample_submission.is_file() {
            return Err(EnvError::Precondition(format!("{} does not exist", tree.sample_submission.display())));
        }
        let sessions = sandbox.limits().working_dir.join("sessions");
        fs::create_dir_all(&sessions)?;
        let workspace = tempfile::Builder::new().prefix("session-").tempdir_in(&sessions)?;
        crate::util::copy_dir(&tree.public_dir, &workspace.path().join(PUBLIC_DIR))?;
        let code_dir = workspace.path().with_extension("code");
        crate::util::fresh_dir(&code_dir)?;
        let mut deny = Vec::new();
        for p in [&task.root, &tree.private_dir, &tree.test_answer, &tree.raw_dir] {
            if let Ok(c) = fs::canonicalize(p) {
                deny.push(c);
            }
        }
        Ok(Self {
            task,
            step_count: 0,
            step_budget,
            history: Vec::new(),
            best_raw_score: None,
            sandbox: sandbox.clone(),
            workspace,
            code_dir,
            deny,
        })
    }

    pub fn workspace(&self) -> &Path {
        self.workspace.path()
    }

    pub fn submission_path(&self) -> PathBuf {
        self.workspace.path().join(SUBMISSION_FILE)
    }

    pub fn exhausted(&self) -> bool {
        self.step_count >= self.step_budget
    }

    pub fn remaining(&self) -> usize {
        self.step_budget.saturating_sub(self.step_count)
    }

    /// Raw scores of counted steps in order; `None` for steps without a score.
    pub fn trajectory(&self) -> Vec<Option<f64>> {
        self.history.iter().filter(|f| f.counted).map(|f| f.raw_score).collect()
    }

    fn record(&mut self, f: ExecutionFeedback) -> ExecutionFeedback {
        self.history.push(f.clone());
        f
    }

    pub fn request_info(&mut self, key: &str) -> ExecutionFeedback {
        let step = self.step_count;
        let text = match key {
            "overview" => self.overview(),
            "data_structure" => self.data_structure(),
            "sample_submission" => head_lines(&self.workspace_public(&self.task.tree.sample_submission), SAMPLE_ROWS),
            _ => {
                let f = ExecutionFeedback::new(
                    FeedbackKind::ValidationError,
                    format!("unknown key {key:?}; expected one of {}", INFO_KEYS.join(", ")),
                    step,
                    false,
                );
                return self.record(f);
            }
        };
        let f = match text {
            Ok(t) => ExecutionFeedback::new(FeedbackKind::Info, t, step, false),
            Err(e) => ExecutionFeedback::new(FeedbackKind::RuntimeError, format!("{key}: {e}"), step, false),
        };
        self.record(f)
    }

    /// Maps a path under the package's public directory to its copy.
    fn workspace_public(&self, path: &Path) -> PathBuf {
        match path.strip_prefix(&self.task.tree.public_dir) {
            Ok(rel) => self.workspace.path().join(PUBLIC_DIR).join(rel),
            Err(_) => path.to_path_buf(),
        }
    }

    fn overview(&self) -> std::io::Result<String> {
        let desc = self.workspace_public(&self.task.tree.public_description);
        let mut text = fs::read_to_string(desc)?;
        if !text.ends_with('\n') {
            text.push('\n');
        }
        text.push_str(&format!(
            "\nData files are in ./{PUBLIC_DIR}/. Write predictions to ./{SUBMISSION_FILE}; every code step that \
             writes it is graded. Metric direction: {}. You have {} code steps.\n",
            if self.task.direction().sign() > 0 { "higher is better" } else { "lower is better" },
            self.step_budget
        ));
        Ok(text)
    }

    fn data_structure(&self) -> std::io::Result<String> {
        if let Some(p) = &self.task.tree.data_structure {
            return fs::read_to_string(self.workspace_public(p));
        }
        let root = self.workspace.path().join(PUBLIC_DIR);
        let mut lines = Vec::new();
        for entry in walkdir::WalkDir::new(&root).sort_by_file_name().min_depth(1) {
            let entry = entry.map_err(std::io::Error::other)?;
            let rel = entry.path().strip_prefix(&root).unwrap_or(entry.path()).display().to_string();
            if entry.file_type().is_dir() {
                lines.push(format!("{PUBLIC_DIR}/{rel}/"));
                continue;
            }
            let size = entry.metadata().map(|m| m.len()).unwrap_or(0);
            let mut line = format!("{PUBLIC_DIR}/{rel} ({size} bytes)");
            if rel.ends_with(".csv") {
                if let Ok(text) = fs::read_to_string(entry.path()) {
                    let header = text.lines().next().unwrap_or("");
                    line.push_str(&format!(", {} rows, columns: {header}", text.lines().count().saturating_sub(1)));
                }
            }
            lines.push(line);
        }
        Ok(lines.join("\n"))
    }

    /// Runs one code step and grades the submission if the step wrote one.
    pub fn execute_code(&mut self, code: &str) -> ExecutionFeedback {
        if self.exhausted() {
            let f = ExecutionFeedback::new(
                FeedbackKind::ValidationError,
                format!("step budget exhausted ({} of {})", self.step_count, self.step_budget),
                self.step_count,
                false,
            );
            return self.record(f);
        }
        self.step_count += 1;
        let step = self.step_count;
        let started = std::time::Instant::now();
        let mut f = self.run_step(code, step);
        f.wall_time = started.elapsed().as_secs_f64();
        if let Some(s) = f.raw_score {
            let dir = self.task.direction();
            self.best_raw_score = Some(match self.best_raw_score {
                Some(b) => dir.best(b, s),
                None => s,
            });
        }
        self.record(f)
    }

    fn run_step(&mut self, code: &str, step: usize) -> ExecutionFeedback {
        let fail = |payload: String| ExecutionFeedback::new(FeedbackKind::RuntimeError, payload, step, true);
        let script = self.code_dir.join(format!("step_{step}.py"));
        if let Err(e) = fs::write(&script, code) {
            return fail(format!("cannot stage code: {e}"));
        }
        let submission = self.submission_path();
        let before = stamp(&submission);
        let spec = ExecSpec::python(&script, self.workspace.path())
            .policy(Policy { deny_read: self.deny.clone(), deny_spawn: true });
        let out = match self.sandbox.run(&spec) {
            Ok(o) => o,
            Err(e) => return fail(e.to_string()),
        };
        if out.timed_out() {
            return fail(format!("timeout after {:.1}s", out.wall_time.as_secs_f64()));
        }
        if !out.success() {
            return fail(out.summary(PAYLOAD_CAP));
        }
        let log = out.summary(PAYLOAD_CAP);
        let after = stamp(&submission);
        if after.is_none() || after == before {
            return ExecutionFeedback::new(
                FeedbackKind::Info,
                format!("{log}\nno new {SUBMISSION_FILE} was written"),
                step,
                true,
            );
        }
        match grade(&self.task, &self.sandbox, &submission) {
            Ok(GradeOutcome::Score { value }) => {
                let mut f = ExecutionFeedback::new(FeedbackKind::Score, format!("{log}\nscore: {value}"), step, true);
                f.raw_score = Some(value);
                f
            }
            Ok(GradeOutcome::Rejected { message }) => {
                ExecutionFeedback::new(FeedbackKind::ValidationError, message, step, true)
            }
            Ok(GradeOutcome::Crashed { message }) => fail(format!("grader failed: {message}")),
            Ok(GradeOutcome::TimedOut) => fail("grader timeout".into()),
            Err(e) => fail(format!("grader failed: {e}")),
        }
    }

    /// Scores a file with the package grader outside the step budget.
    pub fn grade_file(&self, path: &Path) -> Result<GradeOutcome, SandboxError> {
        grade(&self.task, &self.sandbox, path)
    }
}

impl Drop for EnvSession {
    fn drop(&mut self) {
        let _ = fs::remove_dir_all(&self.code_dir);
    }
}
