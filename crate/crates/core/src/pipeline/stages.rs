//! The agent-driven stages. Each function runs one agent episode and turns
//! its payload into a typed result; retry policy lives in the caller.

use std::fs;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::PipelineConfig;
use crate::agent::{run_agent, AgentOutcome, Backend, BackendError, Role, RoleConfig, Transcript, WorkspaceTools};
use crate::sandbox::Sandbox;
use crate::schema::{
    load_package, DeclaredPaths, Defect, DefectCode, RouteTo, TaskMeta, TaskPackage, META_FILE,
};

const OVERVIEW_FILES: usize = 10;
const OVERVIEW_HEAD: usize = 4096;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub definition: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateFormulation {
    pub candidate_id: String,
    pub prediction_target: String,
    pub evaluation_metric: MetricSpec,
    pub data_utilization: String,
    pub justification: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BrainstormStatus {
    Ok,
    BudgetExhausted,
    GenerationFailure,
}

impl BrainstormStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            BrainstormStatus::Ok => "ok",
            BrainstormStatus::BudgetExhausted => "budget-exhausted",
            BrainstormStatus::GenerationFailure => "generation-failure",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrainstormResult {
    pub status: BrainstormStatus,
    pub candidates: Vec<CandidateFormulation>,
    pub notes: Vec<String>,
    pub transcript: Option<Transcript>,
}

/// Directory listing followed by the first 4 KiB of up to ten files.
pub fn dataset_overview(root: &Path) -> std::io::Result<String> {
    let mut listing = Vec::new();
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name().min_depth(1) {
        let entry = entry.map_err(std::io::Error::other)?;
        let rel = entry.path().strip_prefix(root).unwrap_or(entry.path()).display().to_string();
        if entry.file_type().is_dir() {
            listing.push(format!("{rel}/"));
        } else {
            let size = entry.metadata().map(|m| m.len()).unwrap_or(0);
            listing.push(format!("{rel} ({size} bytes)"));
            files.push((rel, entry.path().to_path_buf()));
        }
    }
    let mut out = format!("Dataset files:\n{}\n", listing.join("\n"));
    for (rel, path) in files.iter().take(OVERVIEW_FILES) {
        let bytes = fs::read(path)?;
        let head = String::from_utf8_lossy(&bytes[..bytes.len().min(OVERVIEW_HEAD)]);
        out.push_str(&format!("\n--- {rel} (first {} bytes) ---\n{head}\n", head.len()));
    }
    if files.len() > OVERVIEW_FILES {
        out.push_str(&format!("\n({} more files not shown)\n", files.len() - OVERVIEW_FILES));
    }
    Ok(out)
}

fn nonblank(v: &Value, key: &str) -> Option<String> {
    v.get(key).and_then(Value::as_str).map(str::trim).filter(|s| !s.is_empty()).map(str::to_string)
}

fn grounded(transcript: &Transcript, root: &Path) -> bool {
    transcript.tool_calls().any(|c| {
        c.tool == crate::agent::READ_FILE
            && !c.refused
            && !c.result.starts_with("error:")
            && c.arguments.get("path").is_some_and(|p| {
                let p = Path::new(p.trim());
                let full = if p.is_absolute() { p.to_path_buf() } else { root.join(p) };
                full.is_file()
            })
    })
}

pub fn brainstorm(
    dataset_root: &Path,
    dataset_id: &str,
    backend: &mut dyn Backend,
    sandbox: &Sandbox,
    config: &PipelineConfig,
) -> Result<BrainstormResult, BackendError> {
    let overview = dataset_overview(dataset_root)
        .map_err(|e| BackendError::fatal(format!("cannot read dataset {}: {e}", dataset_root.display())))?;
    let mut tools = WorkspaceTools::new(dataset_root, sandbox.clone())
        .map_err(|e| BackendError::fatal(format!("{}: {e}", dataset_root.display())))?
        .read_only();
    let context = format!(
        "Dataset `{dataset_id}`. Propose between 1 and {} task formulations.\n\n{overview}",
        config.max_candidates
    );
    let role = RoleConfig::new(Role::Brainstormer).with_budget(config.brainstorm_budget);
    let transcript = run_agent(&role, backend, &mut tools, &context, &format!("brainstormer/{dataset_id}"))?;
    let mut notes = Vec::new();
    let status = match &transcript.outcome {
        AgentOutcome::BudgetExhausted => Some(BrainstormStatus::BudgetExhausted),
        AgentOutcome::SchemaViolation { field, message, .. } => {
            notes.push(format!("unparsable proposals: {field}: {message}"));
            Some(BrainstormStatus::GenerationFailure)
        }
        AgentOutcome::Completed => None,
    };
    if let Some(status) = status {
        return Ok(BrainstormResult { status, candidates: Vec::new(), notes, transcript: Some(transcript) });
    }
    let proposals = transcript
        .final_payload
        .as_ref()
        .and_then(|p| p.get("proposals"))
        .and_then(Value::as_array)
        .cloned()
        .unwrap_or_default();
    let mut candidates = Vec::new();
    for (i, p) in proposals.iter().enumerate() {
        let metric = p.get("evaluation_metric").cloned().unwrap_or(Value::Null);
        let parsed = (|| {
            Some(CandidateFormulation {
                candidate_id: String::new(),
                prediction_target: nonblank(p, "prediction_target")?,
                evaluation_metric: MetricSpec {
                    name: nonblank(&metric, "name")?,
                    direction: metric.get("direction").filter(|d| !d.is_null()).cloned(),
                    definition: nonblank(&metric, "definition"),
                },
                data_utilization: nonblank(p, "data_utilization")?,
                justification: nonblank(p, "justification").unwrap_or_default(),
            })
        })();
        match parsed {
            Some(c) => candidates.push(c),
            None => notes.push(format!("proposal {} dropped: empty target, metric or data utilization", i + 1)),
        }
    }
    if candidates.len() > config.max_candidates {
        notes.push(format!(
            "{} proposals truncated to the first {}",
            candidates.len(),
            config.max_candidates
        ));
        candidates.truncate(config.max_candidates);
    }
    for (i, c) in candidates.iter_mut().enumerate() {
        c.candidate_id = format!("candidate_{}", i + 1);
    }
    if !candidates.is_empty() && !grounded(&transcript, dataset_root) {
        notes.push("no dataset file was read; proposals are not grounded".into());
        candidates.clear();
    }
    let status = if candidates.is_empty() { BrainstormStatus::GenerationFailure } else { BrainstormStatus::Ok };
    Ok(BrainstormResult { status, candidates, notes, transcript: Some(transcript) })
}

/// Why an agent stage produced nothing usable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub code: String,
    pub message: String,
}

impl StageFailure {
    fn new(code: &str, message: impl Into<String>) -> Self {
        Self { code: code.to_string(), message: message.into() }
    }

    pub fn feedback(&self) -> String {
        format!("The previous attempt produced no usable result ({}): {}\n", self.code, self.message)
    }
}

pub const E_AGENT_BUDGET: &str = "E_AGENT_BUDGET";
pub const E_AGENT_SCHEMA: &str = "E_AGENT_SCHEMA";
pub const E_BACKEND: &str = "E_BACKEND";
pub const E_PAYLOAD: &str = "E_PAYLOAD";

fn agent_failure(t: &Transcript) -> Option<StageFailure> {
    match &t.outcome {
        AgentOutcome::Completed => None,
        AgentOutcome::BudgetExhausted => {
            Some(StageFailure::new(E_AGENT_BUDGET, format!("no final payload within {} steps", t.step_budget)))
        }
        AgentOutcome::SchemaViolation { field, message, .. } => {
            Some(StageFailure::new(E_AGENT_SCHEMA, format!("final payload field `{field}`: {message}")))
        }
    }
}

/// A transcript plus what the stage made of it.
pub struct StageRun<T> {
    pub transcript: Option<Transcript>,
    pub result: Result<T, StageFailure>,
}

fn run_stage<T>(
    role: RoleConfig,
    backend: &mut dyn Backend,
    tools: &mut WorkspaceTools,
    context: &str,
    episode: &str,
    interpret: impl FnOnce(&Value) -> Result<T, StageFailure>,
) -> StageRun<T> {
    match run_agent(&role, backend, tools, context, episode) {
        Err(e) => StageRun { transcript: None, result: Err(StageFailure::new(E_BACKEND, e.message)) },
        Ok(t) => {
            let result = match agent_failure(&t) {
                Some(f) => Err(f),
                None => interpret(t.final_payload.as_ref().unwrap_or(&Value::Null)),
            };
            StageRun { transcript: Some(t), result }
        }
    }
}

/// Rejects absolute paths and `..` so declared paths stay inside the
/// workspace.
fn relative(field: &str, p: &str) -> Result<String, StageFailure> {
    let path = Path::new(p.trim());
    if path.as_os_str().is_empty()
        || path.is_absolute()
        || path.components().any(|c| matches!(c, Component::ParentDir))
    {
        return Err(StageFailure::new(E_PAYLOAD, format!("{field}: {p:?} must be a relative path inside the workspace")));
    }
    Ok(p.trim().to_string())
}

fn meta_from_payload(value: &Value, dataset_id: &str, candidate_id: &str) -> Result<TaskMeta, StageFailure> {
    let text = toml::to_string(value).map_err(|e| StageFailure::new(E_PAYLOAD, format!("metadata: {e}")))?;
    let mut meta = TaskMeta::parse(&text)
        .map_err(|e| StageFailure::new(E_PAYLOAD, format!("metadata field `{}`: {}", e.field, e.message)))?;
    meta.dataset_id = Some(dataset_id.to_string());
    if meta.task_id.as_deref().is_none_or(str::is_empty) {
        meta.task_id = Some(format!("{dataset_id}-{candidate_id}"));
    }
    Ok(meta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draft {
    pub package: TaskPackage,
    pub selftest_script: PathBuf,
}

fn design_context(candidate: &CandidateFormulation, dataset_id: &str, feedback: &str) -> String {
    let formulation = serde_json::to_string_pretty(candidate).unwrap_or_default();
    let mut out = format!(
        "Dataset `{dataset_id}` is available read-only under raw/ in your workspace.\n\
         Build a complete task for this formulation:\n{formulation}\n"
    );
    if !feedback.is_empty() {
        out.push('\n');
        out.push_str(feedback);
    }
    out
}

/// One designer episode in `workspace`, producing a draft package.
pub fn design_attempt(
    candidate: &CandidateFormulation,
    dataset_id: &str,
    workspace: &Path,
    backend: &mut dyn Backend,
    sandbox: &Sandbox,
    config: &PipelineConfig,
    feedback: &str,
) -> StageRun<Draft> {
    let mut tools = match WorkspaceTools::new(workspace, sandbox.clone()) {
        Ok(t) => t,
        Err(e) => return StageRun { transcript: None, result: Err(StageFailure::new(E_PAYLOAD, e.to_string())) },
    };
    let role = RoleConfig::new(Role::Designer).with_budget(config.design_budget);
    let episode = format!("designer/{dataset_id}/{}", candidate.candidate_id);
    let context = design_context(candidate, dataset_id, feedback);
    run_stage(role, backend, &mut tools, &context, &episode, |p| {
        let s = |k: &str| relative(k, p.get(k).and_then(Value::as_str).unwrap_or(""));
        let o = |k: &str| p.get(k).and_then(Value::as_str).map(|v| relative(k, v)).transpose();
        let paths = DeclaredPaths {
            prepare_script: s("prepare_script")?,
            metric_script: s("metric_script")?,
            description: s("description")?,
            sample_submission: s("sample_submission")?,
            test_answer: s("test_answer")?,
            raw_dir: o("raw_dir")?,
            public_dir: o("public_dir")?,
            private_dir: o("private_dir")?,
            public_description: o("public_description")?,
        };
        let selftest = s("selftest_script")?;
        let meta = meta_from_payload(&p["metadata"], dataset_id, &candidate.candidate_id)?;
        Ok(Draft {
            package: TaskPackage::draft(workspace, &paths, meta),
            selftest_script: workspace.join(selftest),
        })
    })
}

fn refactor_context(draft: &TaskPackage, feedback: &str) -> String {
    let tree = &draft.tree;
    let rel = |p: &Path| p.strip_prefix(&draft.root).unwrap_or(p).display().to_string();
    let mut out = format!(
        "Standardize the draft task in this workspace into the unified layout.\n\
         Draft files:\n- preparation script: {}\n- grader script: {}\n- description: {}\n\
         - raw data: {}\n- public files: {}\n- private files: {}\n\n\
         Unified layout under a new package directory (e.g. competition/):\n\
         prepare.py (def prepare(raw, public, private, seed)), metric.py (class Metric(CompetitionMetric)),\n\
         description.txt, data/raw/, data/public/{{description.txt, sample_submission.csv, ...}},\n\
         data/private/test_answer.csv. task_meta.toml is written for you when absent.\n",
        rel(&tree.prepare_script),
        rel(&tree.metric_script),
        rel(&tree.description),
        rel(&tree.raw_dir),
        rel(&tree.public_dir),
        rel(&tree.private_dir),
    );
    if !feedback.is_empty() {
        out.push('\n');
        out.push_str(feedback);
    }
    out
}

/// One refactor episode. The returned package is loaded from the unified
/// layout the agent reports; missing identifiers in `task_meta.toml` are
/// filled in from the draft metadata.
pub fn refactor_attempt(
    draft: &TaskPackage,
    candidate_id: &str,
    backend: &mut dyn Backend,
    sandbox: &Sandbox,
    config: &PipelineConfig,
    feedback: &str,
) -> StageRun<TaskPackage> {
    let workspace = draft.root.clone();
    let mut tools = match WorkspaceTools::new(&workspace, sandbox.clone()) {
        Ok(t) => t,
        Err(e) => return StageRun { transcript: None, result: Err(StageFailure::new(E_PAYLOAD, e.to_string())) },
    };
    let role = RoleConfig::new(Role::Refactor).with_budget(config.refactor_budget);
    let episode = format!("refactor/{}/{candidate_id}", draft.dataset_id);
    let context = refactor_context(draft, feedback);
    run_stage(role, backend, &mut tools, &context, &episode, |p| {
        let rel = relative("package_root", p.get("package_root").and_then(Value::as_str).unwrap_or(""))?;
        let root = workspace.join(rel);
        if !root.is_dir() {
            return Err(StageFailure::new(E_PAYLOAD, format!("package_root {} is not a directory", root.display())));
        }
        sync_metadata(&root, &draft.metadata).map_err(|e| StageFailure::new(E_PAYLOAD, e))?;
        let mut pkg = load_package(&root).map_err(|e| StageFailure::new(E_PAYLOAD, e.to_string()))?;
        pkg.status = crate::schema::PackageStatus::Refactored;
        Ok(pkg)
    })
}

fn sync_metadata(root: &Path, draft: &TaskMeta) -> Result<(), String> {
    let path = root.join(META_FILE);
    let meta = match fs::read_to_string(&path) {
        Ok(text) => {
            let mut meta = TaskMeta::parse(&text).map_err(|e| format!("{META_FILE}: {e}"))?;
            if meta.task_id.is_some() && meta.dataset_id.is_some() {
                return Ok(());
            }
            meta.task_id = meta.task_id.or_else(|| draft.task_id.clone());
            meta.dataset_id = meta.dataset_id.or_else(|| draft.dataset_id.clone());
            meta
        }
        Err(_) => draft.clone(),
    };
    fs::write(&path, meta.to_toml()).map_err(|e| format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewVerdict {
    Accept,
    Revise,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub aspect: String,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewReport {
    pub verdict: ReviewVerdict,
    pub findings: Vec<Finding>,
}

impl ReviewReport {
    /// Leakage findings become defects; other findings only travel as
    /// feedback text.
    pub fn defects(&self) -> Vec<Defect> {
        self.findings
            .iter()
            .filter(|f| f.aspect == "leakage")
            .map(|f| Defect::new(DefectCode::Leakage, f.note.clone(), RouteTo::Designer))
            .collect()
    }

    pub fn feedback(&self) -> String {
        let mut out = format!("The reviewer asked to {:?} the task:\n", self.verdict).to_lowercase();
        for f in &self.findings {
            out.push_str(&format!("- {}: {}\n", f.aspect, f.note));
        }
        out
    }
}

pub fn review(
    pkg: &TaskPackage,
    candidate_id: &str,
    backend: &mut dyn Backend,
    sandbox: &Sandbox,
    config: &PipelineConfig,
) -> StageRun<ReviewReport> {
    let mut tools = match WorkspaceTools::new(&pkg.root, sandbox.clone()) {
        Ok(t) => t.read_only(),
        Err(e) => return StageRun { transcript: None, result: Err(StageFailure::new(E_PAYLOAD, e.to_string())) },
    };
    let role = RoleConfig::new(Role::Reviewer).with_budget(config.review_budget);
    let episode = format!("reviewer/{}/{candidate_id}", pkg.dataset_id);
    let description = fs::read_to_string(&pkg.tree.public_description).unwrap_or_default();
    let context = format!(
        "Review task `{}` (metric {}, {}). The package is the workspace root.\n\n\
         Public description:\n{description}",
        pkg.task_id,
        pkg.metadata.metric_name,
        if pkg.direction().sign() > 0 { "higher is better" } else { "lower is better" },
    );
    run_stage(role, backend, &mut tools, &context, &episode, |p| {
        let verdict: ReviewVerdict = serde_json::from_value(p["verdict"].clone())
            .map_err(|_| StageFailure::new(E_PAYLOAD, format!("unknown verdict {}", p["verdict"])))?;
        let findings: Vec<Finding> = serde_json::from_value(p["findings"].clone())
            .map_err(|e| StageFailure::new(E_PAYLOAD, format!("findings: {e}")))?;
        Ok(ReviewReport { verdict, findings })
    })
}
