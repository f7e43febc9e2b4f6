use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use taskforge_analytics::{Direction, RunTrajectory};

use super::{EnvError, EnvSession, FeedbackKind, INFO_KEYS};
use crate::agent::{run_agent, Backend, Role, RoleConfig, ToolResult, Toolbox, Transcript};
use crate::sandbox::Sandbox;
use crate::schema::GradeOutcome;
use crate::schema::{Defect, DefectCode, RouteTo, TaskPackage};

pub const REQUEST_INFO: &str = "request_info";
pub const EXECUTE_CODE: &str = "execute_code";

/// Exposes a session as agent tools.
pub struct EnvTools<'a> {
    pub session: &'a mut EnvSession,
}

impl Toolbox for EnvTools<'_> {
    fn describe(&self) -> String {
        format!(
            "- request_info {{\"key\"}}: one of {}; free\n\
             - execute_code {{\"code\"}}: run Python in the task workspace; consumes one of {} steps\n",
            INFO_KEYS.join(", "),
            self.session.step_budget
        )
    }

    fn call(&mut self, tool: &str, args: &BTreeMap<String, String>) -> ToolResult {
        let s = &mut *self.session;
        let feedback = match (tool, args.get("key"), args.get("code")) {
            (REQUEST_INFO, Some(key), _) => s.request_info(key),
            (REQUEST_INFO, None, _) => return ToolResult::error("request_info requires `key`").free(),
            (EXECUTE_CODE, _, Some(code)) => s.execute_code(code),
            (EXECUTE_CODE, _, None) => s.execute_code(""),
            _ => return ToolResult::refused(format!("unknown tool {tool:?}")).free(),
        };
        let mut r = ToolResult::ok(feedback.render(s.step_budget));
        r.counted = feedback.counted;
        r.terminal = s.exhausted();
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationOutcome {
    /// At least one submission was graded during the run.
    pub pipeline_ok: bool,
    /// The best graded submission beat the sample submission.
    pub performance_ok: bool,
    pub baseline_score: Option<f64>,
    pub achieved_score: Option<f64>,
    pub transcript: Transcript,
    pub defects: Vec<Defect>,
}

impl ValidationOutcome {
    pub fn passed(&self) -> bool {
        self.pipeline_ok && self.performance_ok
    }
}

/// Runs the validator agent in a fresh session and compares its best score
/// with the sample submission's.
pub fn run_validation_agent(
    pkg: &TaskPackage,
    backend: &mut dyn Backend,
    sandbox: &Sandbox,
    budget: usize,
    episode: &str,
) -> Result<ValidationOutcome, EnvError> {
    let mut session = EnvSession::open(pkg.clone(), budget, sandbox)?;
    let mut defects = Vec::new();
    let baseline = match session.grade_file(&pkg.tree.sample_submission)? {
        GradeOutcome::Score { value } => Some(value),
        other => {
            defects.push(Defect::new(
                DefectCode::SubmissionFormat,
                format!("sample submission does not grade: {other:?}"),
                RouteTo::Designer,
            ));
            None
        }
    };
    let context = session.request_info("overview").payload;
    let config = RoleConfig::new(Role::Validator).with_budget(budget);
    let transcript = run_agent(&config, backend, &mut EnvTools { session: &mut session }, &context, episode)?;

    let achieved = session.best_raw_score;
    let pipeline_ok = achieved.is_some();
    let direction = pkg.direction();
    let performance_ok = match (achieved, baseline) {
        (Some(a), Some(b)) => direction.better(a, b),
        _ => false,
    };
    if !pipeline_ok {
        let last = session
            .history
            .iter()
            .rev()
            .find(|f| f.counted && f.kind != FeedbackKind::Info)
            .map(|f| format!(": last feedback [{}] {}", f.kind.as_str(), crate::util::tail_text(&f.payload, 512)))
            .unwrap_or_default();
        defects.push(Defect::new(
            DefectCode::ContractArtifacts,
            format!("no submission was graded in {} code steps{last}", session.step_count),
            RouteTo::Refactor,
        ));
    } else if !performance_ok {
        defects.push(Defect::new(
            DefectCode::ContractMetric,
            format!(
                "best score {} does not beat the sample submission baseline {}",
                fmt_opt(achieved),
                fmt_opt(baseline)
            ),
            RouteTo::Designer,
        ));
    }
    Ok(ValidationOutcome {
        pipeline_ok,
        performance_ok,
        baseline_score: baseline,
        achieved_score: achieved,
        transcript,
        defects,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("none".to_string(), |v| v.to_string())
}

/// Raw per-step scores from one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRun {
    pub task_id: String,
    pub model_id: String,
    pub direction: Direction,
    /// One entry per code step; info requests are not steps.
    pub scores: Vec<Option<f64>>,
    pub best: Option<f64>,
    pub transcript: Transcript,
}

impl EvaluationRun {
    pub fn trajectory(&self, steps: usize) -> RunTrajectory {
        RunTrajectory::new(&self.task_id, &self.model_id, self.direction, self.scores.iter().copied(), steps)
    }
}

pub fn run_evaluation(
    pkg: &TaskPackage,
    backend: &mut dyn Backend,
    sandbox: &Sandbox,
    budget: usize,
    run: usize,
) -> Result<EvaluationRun, EnvError> {
    let mut session = EnvSession::open(pkg.clone(), budget, sandbox)?;
    let context = session.request_info("overview").payload;
    let config = RoleConfig::new(Role::Evaluator).with_budget(budget);
    let episode = format!("evaluator/{}/{run}", pkg.task_id);
    let transcript = run_agent(&config, backend, &mut EnvTools { session: &mut session }, &context, &episode)?;
    Ok(EvaluationRun {
        task_id: pkg.task_id.clone(),
        model_id: backend.model_id().to_string(),
        direction: pkg.direction(),
        scores: session.trajectory(),
        best: session.best_raw_score,
        transcript,
    })
}
