//! Task generation: brainstorm formulations for a dataset, then take each
//! candidate through design, pre-refactor assertions, refactor,
//! post-refactor assertions, review and execution-based validation.
//!
//! Every defect carries a route. Designer-routed defects send the candidate
//! back to design, refactor-routed ones back to refactor. Each stage has a
//! budget of total attempts per candidate, so the loop always terminates.

mod stages;
mod stats;

pub use stages::{
    brainstorm, dataset_overview, design_attempt, refactor_attempt, review, BrainstormResult, BrainstormStatus,
    CandidateFormulation, Draft, Finding, MetricSpec, ReviewReport, ReviewVerdict, StageFailure, StageRun,
    E_AGENT_BUDGET, E_AGENT_SCHEMA, E_BACKEND, E_PAYLOAD,
};
pub use stats::{pipeline_stats, Distribution, GenerationStats};

use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::agent::{Backend, Transcript};
use crate::env::run_validation_agent;
use crate::manifest::{EventSink, ManifestEvent, RunState, Stage};
use crate::sandbox::Sandbox;
use crate::schema::{
    assert_contracts_at, AssertionLevel, Defect, DefectCode, RouteTo, TaskPackage, VerificationReport,
};

pub const E_REVIEW_REVISE: &str = "E_REVIEW_REVISE";
pub const E_REVIEW_REJECT: &str = "E_REVIEW_REJECT";
pub const E_REVIEW_UNAVAILABLE: &str = "E_REVIEW_UNAVAILABLE";
pub const E_ENV: &str = "E_ENV";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReviewMode {
    /// A review that cannot be obtained fails the candidate.
    Strict,
    /// A review that cannot be obtained is logged and skipped.
    BestEffort,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub max_candidates: usize,
    /// Total design attempts per candidate.
    pub designer_retries: usize,
    /// Total refactor attempts per candidate.
    pub refactor_retries: usize,
    pub brainstorm_budget: usize,
    pub design_budget: usize,
    pub refactor_budget: usize,
    pub review_budget: usize,
    pub validation_budget: usize,
    pub review_enabled: bool,
    pub review_mode: ReviewMode,
    pub validation_enabled: bool,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            max_candidates: 3,
            designer_retries: 3,
            refactor_retries: 3,
            brainstorm_budget: 30,
            design_budget: 30,
            refactor_budget: 30,
            review_budget: 10,
            validation_budget: 10,
            review_enabled: true,
            review_mode: ReviewMode::Strict,
            validation_enabled: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum CandidateStatus {
    /// Passed every enabled layer including execution-based validation.
    Verified,
    /// Passed assertions (and review, if enabled) with validation disabled.
    AssertionVerified,
    Failed { stage: Stage, code: String },
}

impl CandidateStatus {
    pub fn label(&self) -> String {
        match self {
            CandidateStatus::Verified => "verified".into(),
            CandidateStatus::AssertionVerified => "assertion-verified".into(),
            CandidateStatus::Failed { stage, code } => format!("failed({stage}, {code})"),
        }
    }

    pub fn is_success(&self) -> bool {
        !matches!(self, CandidateStatus::Failed { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub candidate_id: String,
    pub status: CandidateStatus,
    pub task_id: Option<String>,
    pub package_root: Option<PathBuf>,
    pub designer_attempts: usize,
    pub refactor_attempts: usize,
    /// Counted agent steps over all stages.
    pub steps: usize,
    pub cost: f64,
    pub wall_secs: f64,
    /// modality, objective, domain and metric tags of the produced package.
    pub tags: BTreeMap<String, String>,
    /// Defects of the last failed check.
    pub defects: Vec<Defect>,
    pub baseline_score: Option<f64>,
    pub achieved_score: Option<f64>,
}

impl CandidateResult {
    fn new(candidate_id: &str) -> Self {
        Self {
            candidate_id: candidate_id.to_string(),
            status: CandidateStatus::Failed { stage: Stage::Design, code: String::new() },
            task_id: None,
            package_root: None,
            designer_attempts: 0,
            refactor_attempts: 0,
            steps: 0,
            cost: 0.0,
            wall_secs: 0.0,
            tags: BTreeMap::new(),
            defects: Vec::new(),
            baseline_score: None,
            achieved_score: None,
        }
    }

    /// Retries beyond the first attempt, summed over design and refactor.
    pub fn retries(&self) -> usize {
        self.designer_attempts.saturating_sub(1) + self.refactor_attempts.saturating_sub(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRun {
    pub dataset_id: String,
    pub brainstorm: BrainstormStatus,
    pub notes: Vec<String>,
    pub candidates: Vec<CandidateResult>,
    /// Candidates taken from an earlier manifest instead of being rerun.
    pub resumed: Vec<String>,
}

impl DatasetRun {
    pub fn verified(&self) -> impl Iterator<Item = &CandidateResult> {
        self.candidates.iter().filter(|c| c.status.is_success())
    }
}

/// Everything a run shares across datasets.
pub struct RunContext<'a> {
    pub config: &'a PipelineConfig,
    pub sandbox: Sandbox,
    pub backend: &'a mut dyn Backend,
    pub sink: &'a mut dyn EventSink,
    /// Candidate workspaces go to `workdir/{dataset_id}/{candidate_id}/`.
    pub workdir: PathBuf,
    /// State replayed from an earlier manifest of the same run.
    pub resume: RunState,
}

pub fn dataset_id_of(root: &Path) -> String {
    std::fs::canonicalize(root)
        .ok()
        .as_deref()
        .unwrap_or(root)
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into())
}

enum Next {
    Design(String),
    Refactor(String),
    Review,
    Validation,
    Fail(Stage),
}

/// Reviewer episodes tried before a strict-mode review gives up.
const REVIEW_TRIES: usize = 2;

struct Last {
    stage: Stage,
    code: String,
    defects: Vec<Defect>,
}

impl RunContext<'_> {
    fn emit(&mut self, event: ManifestEvent) -> io::Result<()> {
        self.sink.emit(event)
    }

    /// Runs the whole pipeline on one dataset. Candidate failures are
    /// recorded, never propagated; only manifest I/O errors abort.
    pub fn generate_tasks(&mut self, dataset_root: &Path) -> io::Result<DatasetRun> {
        let dataset_id = dataset_id_of(dataset_root);
        let sandbox = self.sandbox.with_seed(self.config.seed);
        let (status, notes, candidates) = match self.resume.brainstorm(&dataset_id) {
            Some(prev) if prev.status == BrainstormStatus::Ok.as_str() => {
                let cands = serde_json::from_value(prev.detail["candidates"].clone()).unwrap_or_default();
                (BrainstormStatus::Ok, Vec::new(), cands)
            }
            _ => self.run_brainstorm(dataset_root, &dataset_id, &sandbox)?,
        };
        let mut run = DatasetRun { dataset_id: dataset_id.clone(), brainstorm: status, notes, candidates: Vec::new(), resumed: Vec::new() };
        for cand in &candidates {
            if let Some(prev) = self.resume.terminal(&dataset_id, &cand.candidate_id) {
                if let Ok(r) = serde_json::from_value::<CandidateResult>(prev.detail.clone()) {
                    run.resumed.push(cand.candidate_id.clone());
                    run.candidates.push(r);
                    continue;
                }
            }
            let result = self.run_candidate(dataset_root, &dataset_id, cand, &sandbox)?;
            run.candidates.push(result);
        }
        Ok(run)
    }

    fn run_brainstorm(
        &mut self,
        dataset_root: &Path,
        dataset_id: &str,
        sandbox: &Sandbox,
    ) -> io::Result<(BrainstormStatus, Vec<String>, Vec<CandidateFormulation>)> {
        let started = Instant::now();
        let result = brainstorm(dataset_root, dataset_id, self.backend, sandbox, self.config);
        let wall = started.elapsed().as_secs_f64();
        let (status, notes, candidates, t) = match result {
            Ok(r) => (r.status, r.notes, r.candidates, r.transcript),
            Err(e) => (BrainstormStatus::GenerationFailure, vec![format!("backend: {}", e.message)], Vec::new(), None),
        };
        let (steps, cost) = t.as_ref().map_or((0, 0.0), |t| (t.counted_steps(), t.usage.cost));
        self.emit(
            ManifestEvent::new(dataset_id, None, Stage::Brainstorm, status.as_str())
                .timing("wall", wall)
                .cost(cost)
                .detail(json!({"steps": steps, "notes": notes, "candidates": candidates})),
        )?;
        Ok((status, notes, candidates))
    }

    fn save_transcript(&self, dataset_id: &str, candidate_id: &str, name: &str, t: &Option<Transcript>) {
        let Some(t) = t else { return };
        let path = self.workdir.join(dataset_id).join(format!("{candidate_id}.transcripts")).join(format!("{name}.json"));
        if let Err(e) = crate::manifest::write_json(&path, t) {
            tracing::warn!("cannot save transcript {}: {e}", path.display());
        }
    }

    fn run_candidate(
        &mut self,
        dataset_root: &Path,
        dataset_id: &str,
        cand: &CandidateFormulation,
        sandbox: &Sandbox,
    ) -> io::Result<CandidateResult> {
        let cid = cand.candidate_id.as_str();
        let started = Instant::now();
        let mut res = CandidateResult::new(cid);
        let workspace = self.workdir.join(dataset_id).join(cid);
        let prepared = crate::util::fresh_dir(&workspace)
            .and_then(|()| crate::util::copy_dir(dataset_root, &workspace.join("raw")));
        if let Err(e) = prepared {
            res.status = CandidateStatus::Failed { stage: Stage::Design, code: E_ENV.into() };
            res.defects = vec![];
            return self.finish(dataset_id, res, started, json!({"error": e.to_string()}));
        }
        let cfg = self.config;
        let mut next = Next::Design(String::new());
        let mut draft: Option<TaskPackage> = None;
        let mut pkg: Option<TaskPackage> = None;
        let mut last = Last { stage: Stage::Design, code: String::new(), defects: Vec::new() };
        let mut review_failures = 0;
        loop {
            next = match next {
                Next::Fail(stage) => {
                    res.status = CandidateStatus::Failed { stage, code: last.code };
                    res.defects = last.defects;
                    return self.finish(dataset_id, res, started, json!({"last_failed_stage": last.stage}));
                }
                Next::Design(feedback) => {
                    if res.designer_attempts >= cfg.designer_retries {
                        next = Next::Fail(Stage::Design);
                        continue;
                    }
                    res.designer_attempts += 1;
                    // A redesign starts from the draft, not from a stale refactored package.
                    if let Some(old) = pkg.take() {
                        if old.root.starts_with(&workspace) && old.root != workspace.join("raw") {
                            let _ = std::fs::remove_dir_all(&old.root);
                        }
                        res.package_root = None;
                    }
                    let t0 = Instant::now();
                    let run = design_attempt(cand, dataset_id, &workspace, self.backend, sandbox, cfg, &feedback);
                    self.account(&mut res, &run.transcript);
                    self.save_transcript(dataset_id, cid, &format!("design_{}", res.designer_attempts), &run.transcript);
                    let d = match run.result {
                        Err(f) => {
                            self.stage_failed(dataset_id, cid, Stage::Design, &f, res.designer_attempts, t0, &run.transcript)?;
                            last = Last { stage: Stage::Design, code: f.code.clone(), defects: Vec::new() };
                            next = Next::Design(f.feedback());
                            continue;
                        }
                        Ok(d) => d,
                    };
                    self.stage_ok(dataset_id, cid, Stage::Design, res.designer_attempts, t0, &run.transcript)?;
                    let t0 = Instant::now();
                    let mut report = assert_contracts_at(&d.package, sandbox, AssertionLevel::PreRefactor);
                    if !d.selftest_script.is_file() {
                        report.push(Defect::new(
                            DefectCode::StructMissing,
                            format!("self-test script {} is missing", d.selftest_script.display()),
                            RouteTo::Designer,
                        ));
                    }
                    self.assertion_event(dataset_id, cid, Stage::PreAssert, &report, t0)?;
                    if report.passed {
                        draft = Some(d.package);
                        Next::Refactor(String::new())
                    } else {
                        last = from_report(Stage::PreAssert, &report);
                        Next::Design(report.feedback())
                    }
                }
                Next::Refactor(feedback) => {
                    let Some(d) = draft.as_ref() else { unreachable!("refactor without a draft") };
                    if res.refactor_attempts >= cfg.refactor_retries {
                        next = Next::Fail(Stage::Refactor);
                        continue;
                    }
                    res.refactor_attempts += 1;
                    let t0 = Instant::now();
                    let run = refactor_attempt(d, cid, self.backend, sandbox, cfg, &feedback);
                    self.account(&mut res, &run.transcript);
                    self.save_transcript(dataset_id, cid, &format!("refactor_{}", res.refactor_attempts), &run.transcript);
                    let p = match run.result {
                        Err(f) => {
                            self.stage_failed(dataset_id, cid, Stage::Refactor, &f, res.refactor_attempts, t0, &run.transcript)?;
                            last = Last { stage: Stage::Refactor, code: f.code.clone(), defects: Vec::new() };
                            next = Next::Refactor(f.feedback());
                            continue;
                        }
                        Ok(p) => p,
                    };
                    self.stage_ok(dataset_id, cid, Stage::Refactor, res.refactor_attempts, t0, &run.transcript)?;
                    let t0 = Instant::now();
                    let report = assert_contracts_at(&p, sandbox, AssertionLevel::PostRefactor);
                    self.assertion_event(dataset_id, cid, Stage::PostAssert, &report, t0)?;
                    res.task_id = Some(p.task_id.clone());
                    res.package_root = Some(p.root.clone());
                    res.tags = tags_of(&p);
                    pkg = Some(p);
                    if report.passed {
                        Next::Review
                    } else {
                        last = from_report(Stage::PostAssert, &report);
                        route(&report.defects, report.feedback())
                    }
                }
                Next::Review => {
                    let Some(p) = pkg.as_ref() else { unreachable!("review without a package") };
                    if !cfg.review_enabled {
                        Next::Validation
                    } else {
                        self.run_review(dataset_id, cid, p, sandbox, &mut res, &mut last, &mut review_failures)?
                    }
                }
                Next::Validation => {
                    let Some(p) = pkg.as_ref() else { unreachable!("validation without a package") };
                    if !cfg.validation_enabled {
                        res.status = CandidateStatus::AssertionVerified;
                        return self.finish(dataset_id, res, started, json!({}));
                    }
                    let t0 = Instant::now();
                    let episode = format!("validator/{dataset_id}/{cid}");
                    match run_validation_agent(p, self.backend, sandbox, cfg.validation_budget, &episode) {
                        Err(e) => {
                            let f = StageFailure { code: E_ENV.into(), message: e.to_string() };
                            self.stage_failed(dataset_id, cid, Stage::Validation, &f, 1, t0, &None)?;
                            res.status = CandidateStatus::Failed { stage: Stage::Validation, code: E_ENV.into() };
                            return self.finish(dataset_id, res, started, json!({"error": e.to_string()}));
                        }
                        Ok(v) => {
                            let transcript = Some(v.transcript.clone());
                            self.account(&mut res, &transcript);
                            self.save_transcript(dataset_id, cid, "validation", &transcript);
                            res.baseline_score = v.baseline_score;
                            res.achieved_score = v.achieved_score;
                            self.emit(
                                ManifestEvent::new(dataset_id, Some(cid), Stage::Validation, if v.passed() { "ok" } else { "failed" })
                                    .defects(&v.defects)
                                    .timing("wall", t0.elapsed().as_secs_f64())
                                    .cost(v.transcript.usage.cost)
                                    .detail(json!({
                                        "pipeline_ok": v.pipeline_ok,
                                        "performance_ok": v.performance_ok,
                                        "baseline_score": v.baseline_score,
                                        "achieved_score": v.achieved_score,
                                        "steps": v.transcript.counted_steps(),
                                    })),
                            )?;
                            if v.passed() {
                                res.status = CandidateStatus::Verified;
                                return self.finish(dataset_id, res, started, json!({}));
                            }
                            last = Last {
                                stage: Stage::Validation,
                                code: v.defects.first().map(|d| d.code.to_string()).unwrap_or_default(),
                                defects: v.defects.clone(),
                            };
                            route(&v.defects, feedback_of(&v.defects))
                        }
                    }
                }
            };
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn run_review(
        &mut self,
        dataset_id: &str,
        cid: &str,
        p: &TaskPackage,
        sandbox: &Sandbox,
        res: &mut CandidateResult,
        last: &mut Last,
        review_failures: &mut usize,
    ) -> io::Result<Next> {
        let t0 = Instant::now();
        let run = review(p, cid, self.backend, sandbox, self.config);
        self.account(res, &run.transcript);
        self.save_transcript(dataset_id, cid, "review", &run.transcript);
        let cost = run.transcript.as_ref().map_or(0.0, |t| t.usage.cost);
        let report = match run.result {
            Err(f) => {
                let best_effort = self.config.review_mode == ReviewMode::BestEffort;
                let status = if best_effort { "skipped" } else { "failed" };
                self.emit(
                    ManifestEvent::new(dataset_id, Some(cid), Stage::Review, status)
                        .timing("wall", t0.elapsed().as_secs_f64())
                        .cost(cost)
                        .detail(json!({"code": f.code, "message": f.message})),
                )?;
                if best_effort {
                    tracing::warn!(dataset_id, cid, "review unavailable, continuing: {}", f.message);
                    return Ok(Next::Validation);
                }
                *last = Last { stage: Stage::Review, code: E_REVIEW_UNAVAILABLE.into(), defects: Vec::new() };
                *review_failures += 1;
                return Ok(if *review_failures < REVIEW_TRIES { Next::Review } else { Next::Fail(Stage::Review) });
            }
            Ok(r) => r,
        };
        let defects = report.defects();
        self.emit(
            ManifestEvent::new(dataset_id, Some(cid), Stage::Review, match report.verdict {
                ReviewVerdict::Accept => "accept",
                ReviewVerdict::Revise => "revise",
                ReviewVerdict::Reject => "reject",
            })
            .defects(&defects)
            .timing("wall", t0.elapsed().as_secs_f64())
            .cost(cost)
            .detail(json!({"findings": report.findings})),
        )?;
        Ok(match report.verdict {
            ReviewVerdict::Accept => Next::Validation,
            ReviewVerdict::Revise => {
                *last = Last { stage: Stage::Review, code: E_REVIEW_REVISE.into(), defects };
                Next::Refactor(report.feedback())
            }
            ReviewVerdict::Reject => {
                let code = if defects.is_empty() { E_REVIEW_REJECT.to_string() } else { DefectCode::Leakage.to_string() };
                *last = Last { stage: Stage::Review, code, defects };
                Next::Design(report.feedback())
            }
        })
    }

    fn account(&self, res: &mut CandidateResult, t: &Option<Transcript>) {
        if let Some(t) = t {
            res.steps += t.counted_steps();
            res.cost += t.usage.cost;
        }
    }

    fn stage_ok(
        &mut self,
        dataset_id: &str,
        cid: &str,
        stage: Stage,
        attempt: usize,
        t0: Instant,
        t: &Option<Transcript>,
    ) -> io::Result<()> {
        let (steps, cost) = t.as_ref().map_or((0, 0.0), |t| (t.counted_steps(), t.usage.cost));
        let unknown = t.as_ref().map(|t| t.unknown_fields.clone()).unwrap_or_default();
        self.emit(
            ManifestEvent::new(dataset_id, Some(cid), stage, "ok")
                .timing("wall", t0.elapsed().as_secs_f64())
                .cost(cost)
                .detail(json!({"attempt": attempt, "steps": steps, "unknown_fields": unknown})),
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn stage_failed(
        &mut self,
        dataset_id: &str,
        cid: &str,
        stage: Stage,
        f: &StageFailure,
        attempt: usize,
        t0: Instant,
        t: &Option<Transcript>,
    ) -> io::Result<()> {
        let (steps, cost) = t.as_ref().map_or((0, 0.0), |t| (t.counted_steps(), t.usage.cost));
        self.emit(
            ManifestEvent::new(dataset_id, Some(cid), stage, "failed")
                .timing("wall", t0.elapsed().as_secs_f64())
                .cost(cost)
                .detail(json!({"attempt": attempt, "steps": steps, "code": f.code, "message": f.message})),
        )
    }

    fn assertion_event(
        &mut self,
        dataset_id: &str,
        cid: &str,
        stage: Stage,
        report: &VerificationReport,
        t0: Instant,
    ) -> io::Result<()> {
        self.emit(
            ManifestEvent::new(dataset_id, Some(cid), stage, if report.passed { "ok" } else { "failed" })
                .defects(&report.defects)
                .timing("wall", t0.elapsed().as_secs_f64())
                .detail(json!({"notes": report.notes, "scores": report.scores})),
        )
    }

    fn finish(
        &mut self,
        dataset_id: &str,
        mut res: CandidateResult,
        started: Instant,
        extra: serde_json::Value,
    ) -> io::Result<CandidateResult> {
        res.wall_secs = started.elapsed().as_secs_f64();
        let mut detail = serde_json::to_value(&res).map_err(io::Error::other)?;
        if let (Some(d), Some(e)) = (detail.as_object_mut(), extra.as_object()) {
            d.extend(e.clone());
        }
        let status = match &res.status {
            CandidateStatus::Failed { .. } => "failed".to_string(),
            s => s.label(),
        };
        self.emit(
            ManifestEvent::new(dataset_id, Some(&res.candidate_id), Stage::Final, status)
                .defects(&res.defects)
                .timing("wall", res.wall_secs)
                .cost(res.cost)
                .detail(detail),
        )?;
        Ok(res)
    }
}

fn from_report(stage: Stage, report: &VerificationReport) -> Last {
    Last {
        stage,
        code: report.defects.first().map(|d| d.code.to_string()).unwrap_or_default(),
        defects: report.defects.clone(),
    }
}

/// Designer-routed defects take precedence: a regenerated draft also gets a
/// fresh refactor.
fn route(defects: &[Defect], feedback: String) -> Next {
    if defects.iter().any(|d| d.route_to != RouteTo::Refactor) {
        Next::Design(feedback)
    } else {
        Next::Refactor(feedback)
    }
}

fn feedback_of(defects: &[Defect]) -> String {
    let mut out = String::from("Execution-based validation failed:\n");
    for d in defects {
        out.push_str(&format!("- {}: {}\n", d.code, d.detail));
    }
    out
}

fn tags_of(p: &TaskPackage) -> BTreeMap<String, String> {
    let m = &p.metadata;
    [
        ("modality", m.modality.as_str().to_string()),
        ("objective", m.objective.clone()),
        ("domain", m.domain.clone()),
        ("metric", m.metric_name.clone()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}
