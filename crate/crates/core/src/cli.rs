//! The `taskforge` command line.
//!
//! Exit codes: 0 success, 1 task-level failures, 2 usage or configuration
//! errors.

use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::agent::Backend;
use crate::analytics::{
    agreement_report, average_curves, best_so_far, fit_elo, normalize_trajectory, pairwise_outcomes,
    win_loss_matrix, AgreementReport, CurveSet, EloConfig, LabeledCurve, RatingSets, WinLossMatrix,
};
use crate::config::{BackendConfig, RunConfig};
use crate::env::{run_evaluation, run_validation_agent, serve, EnvSession};
use crate::manifest::{read_events, write_json, Manifest, RunState, MANIFEST_FILE, SUMMARY_FILE};
use crate::pipeline::{pipeline_stats, DatasetRun, GenerationStats, ReviewMode, RunContext};
use crate::sandbox::Sandbox;
use crate::schema::{assert_contracts, load_package, Defect, VerificationReport};
use crate::tables::{self, ScoreRow, ScoredRun};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURES: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments, unreadable inputs or an invalid configuration.
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Other(_) => EXIT_FAILURES,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Debug, Parser)]
#[command(name = "taskforge", version, about = "Generate, verify and run ML engineering task packages")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run directory (manifest, summary, generated tasks).
    #[arg(long, global = true)]
    pub workspace: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Replay this scenario file instead of the configured backend.
    #[arg(long, global = true)]
    pub scenario: Option<PathBuf>,
    /// Freeze timestamps, timings and costs and redact run paths.
    #[arg(long, global = true)]
    pub test_mode: bool,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Turn raw datasets into verified task packages.
    Generate(GenerateArgs),
    /// Run the structural and contract assertions on task packages.
    Verify(TaskArgs),
    /// Assertions plus execution-based validation.
    Validate(TaskArgs),
    /// Run an agent on task packages and write the per-step score table.
    Evaluate(EvaluateArgs),
    /// Elo ratings, performance curves and agreement statistics.
    Analyze(AnalyzeArgs),
    /// Generation statistics from a run manifest.
    Stats(StatsArgs),
    /// Interactive environment over stdin/stdout.
    #[command(subcommand)]
    Env(EnvCommand),
}

#[derive(Debug, Clone, Default, Args)]
pub struct GenerateArgs {
    #[arg(required = true)]
    pub datasets: Vec<PathBuf>,
    #[arg(long)]
    pub max_candidates: Option<usize>,
    /// Skip the review layer.
    #[arg(long)]
    pub no_review: bool,
    /// Skip execution-based validation.
    #[arg(long)]
    pub no_validation: bool,
    /// Skip an unavailable review instead of failing the candidate.
    #[arg(long)]
    pub best_effort_review: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TaskArgs {
    #[arg(required = true)]
    pub tasks: Vec<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct EvaluateArgs {
    pub tasks: Vec<PathBuf>,
    #[arg(long)]
    pub runs: Option<usize>,
    /// Code-execution steps per run.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub task_set: Option<String>,
    /// Score table path (default `<workspace>/scores.csv`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    /// Per-step score table.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Rating table with one column per rating set.
    #[arg(long)]
    pub ratings: Option<PathBuf>,
    #[arg(long = "k", value_delimiter = ',', default_value = "3,5")]
    pub k_list: Vec<usize>,
    /// Steps per normalized trajectory.
    #[arg(long, default_value_t = crate::analytics::DEFAULT_STEPS)]
    pub steps: usize,
    /// Output directory (default `<workspace>/analysis`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Default for AnalyzeArgs {
    fn default() -> Self {
        Self { scores: None, ratings: None, k_list: vec![3, 5], steps: crate::analytics::DEFAULT_STEPS, out: None }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct StatsArgs {
    /// Run directory (default: the workspace).
    pub run_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum EnvCommand {
    /// Serve one session: JSON requests on stdin, responses on stdout.
    Serve {
        task: PathBuf,
        #[arg(long, default_value_t = 10)]
        steps: usize,
    },
}

/// Loads the config file (if any) and applies command-line overrides.
pub fn load_config(global: &GlobalArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &global.config {
        Some(path) => RunConfig::load(path).map_err(|e| usage(e.to_string()))?,
        None => RunConfig::default(),
    };
    if let Some(w) = &global.workspace {
        cfg.workspace = w.clone();
    }
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(s) = &global.scenario {
        cfg.backend = Some(BackendConfig::Scripted { scenario: s.clone() });
    }
    cfg.test_mode |= global.test_mode;
    cfg.workspace = absolute(&cfg.workspace)?;
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn absolute(path: &Path) -> Result<PathBuf, CliError> {
    std::path::absolute(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn sandbox(cfg: &RunConfig) -> Result<Sandbox, CliError> {
    let sb = Sandbox::new(cfg.sandbox_limits())
        .with_context(|| format!("cannot set up the sandbox under {}", cfg.sandbox_limits().working_dir.display()))?;
    Ok(sb.with_seed(cfg.seed))
}

fn backend(cfg: &RunConfig) -> Result<Box<dyn Backend>, CliError> {
    cfg.backend().map_err(|e| usage(e.message))
}

fn require_dirs(paths: &[PathBuf], what: &str) -> Result<(), CliError> {
    if paths.is_empty() {
        return Err(usage(format!("no {what} given")));
    }
    for p in paths {
        if let Err(e) = std::fs::read_dir(p) {
            return Err(usage(format!("cannot read {what} {}: {e}", p.display())));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct GenerateReport {
    pub run_dir: PathBuf,
    pub datasets: Vec<DatasetRun>,
    pub stats: GenerationStats,
}

impl GenerateReport {
    pub fn verified(&self) -> usize {
        self.datasets.iter().map(|d| d.verified().count()).sum()
    }

    pub fn exit_code(&self) -> u8 {
        if self.verified() > 0 {
            EXIT_OK
        } else {
            EXIT_FAILURES
        }
    }
}

pub fn cmd_generate(cfg: &RunConfig, args: &GenerateArgs) -> Result<GenerateReport, CliError> {
    require_dirs(&args.datasets, "dataset")?;
    let datasets = args.datasets.iter().map(|d| absolute(d)).collect::<Result<Vec<_>, _>>()?;
    let mut pipeline = cfg.pipeline_config();
    if let Some(n) = args.max_candidates {
        if n == 0 {
            return Err(usage("--max-candidates must be at least 1"));
        }
        pipeline.max_candidates = n;
    }
    pipeline.review_enabled &= !args.no_review;
    pipeline.validation_enabled &= !args.no_validation;
    if args.best_effort_review {
        pipeline.review_mode = ReviewMode::BestEffort;
    }
    let mut backend = backend(cfg)?;
    let sandbox = sandbox(cfg)?;
    let run_dir = cfg.workspace.clone();

    let (previous, skipped) = read_events(&run_dir.join(MANIFEST_FILE)).context("cannot read the run manifest")?;
    for (line, err) in skipped {
        eprintln!("warning: {MANIFEST_FILE} line {line} skipped: {err}");
    }
    let mut manifest = Manifest::open(&run_dir, cfg.test_mode)
        .with_context(|| format!("cannot open the manifest in {}", run_dir.display()))?
        .redact(&run_dir, "$RUN")
        .redact(&sandbox.limits().working_dir, "$SANDBOX")
        .redact(sandbox.runtime_dir(), "$RUNTIME");
    for d in &datasets {
        manifest = manifest.redact(d, &format!("$DATASET/{}", crate::pipeline::dataset_id_of(d)));
    }

    let mut runs = Vec::new();
    {
        let mut sink = &manifest;
        let mut ctx = RunContext {
            config: &pipeline,
            sandbox: sandbox.clone(),
            backend: backend.as_mut(),
            sink: &mut sink,
            workdir: run_dir.join("tasks"),
            resume: RunState::replay(&previous),
        };
        for d in &datasets {
            let run = ctx.generate_tasks(d).context("manifest write failed")?;
            for c in &run.candidates {
                let root = c.package_root.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
                println!(
                    "{}/{}\t{}\t{}\t{}",
                    run.dataset_id,
                    c.candidate_id,
                    c.status.label(),
                    c.task_id.as_deref().unwrap_or("-"),
                    manifest.redact_text(root)
                );
            }
            if run.candidates.is_empty() {
                println!("{}\t{}\t{}", run.dataset_id, run.brainstorm.as_str(), run.notes.join("; "));
            }
            runs.push(run);
        }
    }
    let events = manifest.events().context("cannot re-read the manifest")?;
    let report = GenerateReport { run_dir: run_dir.clone(), datasets: runs, stats: pipeline_stats(&events) };
    let mut datasets = report.datasets.clone();
    if cfg.test_mode {
        for c in datasets.iter_mut().flat_map(|d| d.candidates.iter_mut()) {
            c.cost = 0.0;
            c.wall_secs = 0.0;
        }
    }
    let summary = json!({
        "verified": report.verified(),
        "seed": cfg.seed,
        "pipeline": pipeline,
        "datasets": datasets,
        "stats": report.stats,
    });
    let text = manifest.redact_text(serde_json::to_string_pretty(&summary).context("summary")?);
    let value: serde_json::Value = serde_json::from_str(&text).context("summary")?;
    write_json(&run_dir.join(SUMMARY_FILE), &value).context("cannot write the summary")?;
    println!("{} verified task(s); manifest {}", report.verified(), manifest.path().display());
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct TaskCheck {
    pub root: PathBuf,
    pub task_id: String,
    pub passed: bool,
    pub defects: Vec<Defect>,
    pub message: Option<String>,
    pub baseline_score: Option<f64>,
    pub achieved_score: Option<f64>,
}

impl TaskCheck {
    fn from_report(root: &Path, task_id: &str, report: &VerificationReport) -> Self {
        Self {
            root: root.to_path_buf(),
            task_id: task_id.to_string(),
            passed: report.passed,
            defects: report.defects.clone(),
            message: None,
            baseline_score: None,
            achieved_score: None,
        }
    }

    fn print(&self) {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        println!("{verdict}\t{}\t{}", self.task_id, self.root.display());
        if let Some(m) = &self.message {
            println!("  {m}");
        }
        for d in &self.defects {
            println!("  {d}");
        }
    }
}

pub fn checks_exit_code(checks: &[TaskCheck]) -> u8 {
    if checks.iter().all(|c| c.passed) {
        EXIT_OK
    } else {
        EXIT_FAILURES
    }
}

fn check_package(root: &Path, sandbox: &Sandbox) -> Result<(crate::schema::TaskPackage, TaskCheck), Box<TaskCheck>> {
    match load_package(root) {
        Err(e) => Err(Box::new(TaskCheck {
            root: root.to_path_buf(),
            task_id: "-".into(),
            passed: false,
            defects: Vec::new(),
            message: Some(e.to_string()),
            baseline_score: None,
            achieved_score: None,
        })),
        Ok(pkg) => {
            let report = assert_contracts(&pkg, sandbox);
            let check = TaskCheck::from_report(root, &pkg.task_id, &report);
            Ok((pkg, check))
        }
    }
}

pub fn cmd_verify(cfg: &RunConfig, args: &TaskArgs) -> Result<Vec<TaskCheck>, CliError> {
    require_dirs(&args.tasks, "task package")?;
    let sandbox = sandbox(cfg)?;
    let checks: Vec<TaskCheck> = args
        .tasks
        .iter()
        .map(|root| match check_package(root, &sandbox) {
            Ok((_, c)) => c,
            Err(c) => *c,
        })
        .collect();
    checks.iter().for_each(TaskCheck::print);
    Ok(checks)
}

pub fn cmd_validate(cfg: &RunConfig, args: &TaskArgs) -> Result<Vec<TaskCheck>, CliError> {
    require_dirs(&args.tasks, "task package")?;
    let sandbox = sandbox(cfg)?;
    let mut backend = backend(cfg)?;
    let mut checks = Vec::new();
    for root in &args.tasks {
        let check = match check_package(root, &sandbox) {
            Err(c) => *c,
            Ok((_, c)) if !c.passed => c,
            Ok((pkg, mut c)) => {
                let episode = format!("validator/{}/{}", pkg.dataset_id, pkg.task_id);
                let budget = cfg.pipeline.validation_budget;
                match run_validation_agent(&pkg, backend.as_mut(), &sandbox, budget, &episode) {
                    Ok(v) => {
                        c.passed = v.passed();
                        c.defects = v.defects;
                        c.baseline_score = v.baseline_score;
                        c.achieved_score = v.achieved_score;
                        let fmt = |s: Option<f64>| s.map_or("-".to_string(), |v| v.to_string());
                        c.message = Some(format!(
                            "pipeline {}, performance {} (baseline {}, achieved {})",
                            if v.pipeline_ok { "ok" } else { "failed" },
                            if v.performance_ok { "ok" } else { "failed" },
                            fmt(v.baseline_score),
                            fmt(v.achieved_score),
                        ));
                    }
                    Err(e) => {
                        c.passed = false;
                        c.message = Some(format!("validation could not run: {e}"));
                    }
                }
                c
            }
        };
        check.print();
        checks.push(check);
    }
    Ok(checks)
}

#[derive(Debug, Clone, Serialize)]
pub struct EvaluateReport {
    pub table: PathBuf,
    pub rows: Vec<ScoreRow>,
    pub errors: Vec<String>,
}

impl EvaluateReport {
    pub fn exit_code(&self) -> u8 {
        if self.errors.is_empty() {
            EXIT_OK
        } else {
            EXIT_FAILURES
        }
    }
}

pub fn cmd_evaluate(cfg: &RunConfig, args: &EvaluateArgs) -> Result<EvaluateReport, CliError> {
    require_dirs(&args.tasks, "task package")?;
    let runs = args.runs.unwrap_or(cfg.evaluation.runs);
    let steps = args.steps.unwrap_or(cfg.evaluation.step_budget);
    if runs == 0 || steps == 0 {
        return Err(usage("--runs and --steps must be at least 1"));
    }
    let task_set = args.task_set.clone().unwrap_or_else(|| cfg.evaluation.task_set.clone());
    let sandbox = sandbox(cfg)?;
    let mut backend = backend(cfg)?;
    let model_id = backend.model_id().to_string();
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for root in &args.tasks {
        let pkg = match load_package(root) {
            Ok(p) => p,
            Err(e) => {
                errors.push(e.to_string());
                continue;
            }
        };
        let category = pkg.metadata.modality.as_str().to_string();
        for run in 1..=runs {
            match run_evaluation(&pkg, backend.as_mut(), &sandbox, steps, run) {
                Ok(r) => {
                    let scores = if r.scores.is_empty() { vec![None] } else { r.scores };
                    for (i, s) in scores.into_iter().enumerate() {
                        rows.push(ScoreRow {
                            task_id: pkg.task_id.clone(),
                            model_id: model_id.clone(),
                            run,
                            step: i + 1,
                            raw_score: s,
                            direction: r.direction,
                            category: category.clone(),
                            task_set: task_set.clone(),
                            weight: 1.0,
                            best_run: false,
                        });
                    }
                }
                Err(e) => errors.push(format!("{} run {run}: {e}", pkg.task_id)),
            }
        }
    }
    let grouped = tables::group_runs(&rows);
    let best: BTreeSet<(String, String, usize)> = tables::best_runs(&grouped)
        .into_iter()
        .map(|r| (r.task_id.clone(), r.model_id.clone(), r.run))
        .collect();
    for r in &mut rows {
        r.best_run = best.contains(&(r.task_id.clone(), r.model_id.clone(), r.run));
    }
    let table = args.out.clone().unwrap_or_else(|| cfg.workspace.join("scores.csv"));
    if let Some(dir) = table.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let file = std::fs::File::create(&table).with_context(|| format!("cannot write {}", table.display()))?;
    tables::write_scores(file, &rows).with_context(|| format!("cannot write {}", table.display()))?;
    for r in tables::best_runs(&grouped) {
        let best = r.best().map_or("-".to_string(), |v| v.to_string());
        println!("{}\t{}\tbest run {}\tbest score {best}", r.task_id, r.model_id, r.run);
    }
    for e in &errors {
        eprintln!("error: {e}");
    }
    println!("{} row(s) written to {}", rows.len(), table.display());
    Ok(EvaluateReport { table, rows, errors })
}

/// One Elo rating within a scope. `task_set` and `category` are `all` when
/// the scope does not restrict them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EloRow {
    pub task_set: String,
    pub category: String,
    pub model_id: String,
    pub rank: usize,
    pub elo: f64,
    /// Win points (1 per win, 0.5 per tie); absent for imported ratings.
    pub points: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct AnalyzeReport {
    pub elo: Vec<EloRow>,
    pub win_loss: Option<WinLossMatrix>,
    /// Averaged best-so-far curves per model.
    pub curves: BTreeMap<String, CurveSet>,
    pub agreement: Option<AgreementReport>,
    /// Where the agreement inputs came from: `ratings` or `task-sets`.
    pub agreement_source: Option<String>,
    pub warnings: Vec<String>,
    pub files: Vec<PathBuf>,
}

const ALL: &str = "all";

fn elo_rows(task_set: &str, category: &str, runs: &[&ScoredRun], out: &mut Vec<EloRow>) -> Option<WinLossMatrix> {
    let outcomes = pairwise_outcomes(&tables::task_scores(runs.iter().copied()));
    if outcomes.models.len() < 2 {
        return None;
    }
    let table = fit_elo(&outcomes, &EloConfig::default());
    let wl = win_loss_matrix(&outcomes);
    for (rank, (m, elo)) in table.ranked().into_iter().enumerate() {
        let points = outcomes.index_of(m).map(|i| wl.aggregate[i]);
        out.push(EloRow {
            task_set: task_set.into(),
            category: category.into(),
            model_id: m.into(),
            rank: rank + 1,
            elo,
            points,
        });
    }
    Some(wl)
}

/// Rating sets derived from per-set Elo: one column per task set plus the
/// combined fit, restricted to models rated everywhere.
fn sets_from_elo(rows: &[EloRow], sets: &BTreeSet<String>) -> RatingSets {
    let mut names: Vec<String> = sets.iter().cloned().collect();
    names.push("combined".into());
    let lookup = |set: &str, m: &str| {
        let key = if set == "combined" { ALL } else { set };
        rows.iter().find(|r| r.task_set == key && r.category == ALL && r.model_id == m).map(|r| r.elo)
    };
    let models: Vec<String> = rows
        .iter()
        .filter(|r| r.task_set == ALL && r.category == ALL)
        .map(|r| r.model_id.clone())
        .filter(|m| names.iter().all(|s| lookup(s, m).is_some()))
        .collect();
    RatingSets {
        sets: names.iter().map(|s| (s.clone(), models.iter().map(|m| lookup(s, m).unwrap_or(f64::NAN)).collect())).collect(),
        models,
    }
}

fn f6(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        String::new()
    }
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()
}

fn strings<const N: usize>(a: [&str; N]) -> Vec<String> {
    a.iter().map(|s| s.to_string()).collect()
}

pub fn cmd_analyze(cfg: &RunConfig, args: &AnalyzeArgs) -> Result<AnalyzeReport, CliError> {
    if args.scores.is_none() && args.ratings.is_none() {
        return Err(usage("analyze needs --scores and/or --ratings"));
    }
    if args.steps == 0 {
        return Err(usage("--steps must be at least 1"));
    }
    let mut report = AnalyzeReport::default();

    if let Some(path) = &args.scores {
        let (rows, warnings) = tables::read_scores_file(path)
            .map_err(|e| usage(format!("cannot read score table {}: {e}", path.display())))?;
        report.warnings.extend(warnings.iter().map(|w| format!("{}: {w}", path.display())));
        let grouped = tables::group_runs(&rows);
        let best = tables::best_runs(&grouped);
        report.win_loss = elo_rows(ALL, ALL, &best, &mut report.elo);
        let sets = tables::task_sets(&best);
        let categories: BTreeSet<String> =
            best.iter().filter(|r| !r.category.is_empty()).map(|r| r.category.clone()).collect();
        if sets.len() > 1 {
            for s in &sets {
                let sub: Vec<&ScoredRun> = best.iter().copied().filter(|r| &r.task_set == s).collect();
                elo_rows(s, ALL, &sub, &mut report.elo);
            }
        }
        if categories.len() > 1 {
            for c in &categories {
                let sub: Vec<&ScoredRun> = best.iter().copied().filter(|r| &r.category == c).collect();
                elo_rows(ALL, c, &sub, &mut report.elo);
                if sets.len() > 1 {
                    for s in &sets {
                        let sub: Vec<&ScoredRun> = sub.iter().copied().filter(|r| &r.task_set == s).collect();
                        elo_rows(s, c, &sub, &mut report.elo);
                    }
                }
            }
        }
        let mut by_model: BTreeMap<&str, Vec<LabeledCurve>> = BTreeMap::new();
        for r in &best {
            let values = best_so_far(&normalize_trajectory(&r.trajectory(args.steps)).values);
            let group = if r.category.is_empty() { "uncategorized".to_string() } else { r.category.clone() };
            by_model.entry(&r.model_id).or_default().push(LabeledCurve { group, values });
        }
        for (m, curves) in by_model {
            let set = average_curves(&curves, &[]);
            report.warnings.extend(set.warnings.iter().map(|w| format!("{m}: {w}")));
            report.curves.insert(m.to_string(), set);
        }
        if args.ratings.is_none() && sets.len() > 1 {
            let rs = sets_from_elo(&report.elo, &sets);
            match agreement_report(&rs, &args.k_list) {
                Ok(a) => {
                    report.agreement = Some(a);
                    report.agreement_source = Some("task-sets".into());
                }
                Err(e) => report.warnings.push(format!("agreement across task sets: {e}")),
            }
        }
    }

    if let Some(path) = &args.ratings {
        let (rs, warnings) = tables::read_ratings_file(path)
            .map_err(|e| usage(format!("cannot read rating table {}: {e}", path.display())))?;
        report.warnings.extend(warnings.iter().map(|w| format!("{}: {w}", path.display())));
        for (name, values) in &rs.sets {
            let mut order: Vec<usize> = (0..rs.models.len()).collect();
            order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(rs.models[a].cmp(&rs.models[b])));
            for (rank, i) in order.into_iter().enumerate() {
                report.elo.push(EloRow {
                    task_set: name.clone(),
                    category: ALL.into(),
                    model_id: rs.models[i].clone(),
                    rank: rank + 1,
                    elo: values[i],
                    points: None,
                });
            }
        }
        if rs.sets.len() < 2 {
            report.warnings.push("agreement needs at least two rating sets; omitted".into());
        } else {
            match agreement_report(&rs, &args.k_list) {
                Ok(a) => {
                    report.agreement = Some(a);
                    report.agreement_source = Some("ratings".into());
                }
                Err(e) => report.warnings.push(format!("agreement: {e}")),
            }
        }
    }

    let out = args.out.clone().unwrap_or_else(|| cfg.workspace.join("analysis"));
    write_analysis(&out, &report, &args.k_list)
        .with_context(|| format!("cannot write analysis files to {}", out.display()))?;
    report.files = analysis_files(&out, &report);
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    print_analysis(&report, &args.k_list);
    Ok(report)
}

fn analysis_files(out: &Path, report: &AnalyzeReport) -> Vec<PathBuf> {
    let mut names = vec!["elo.csv"];
    if report.win_loss.is_some() {
        names.push("win_loss.csv");
    }
    if !report.curves.is_empty() {
        names.push("curves.csv");
    }
    if report.agreement.is_some() {
        names.extend(["agreement.csv", "reliability.csv"]);
    }
    names.push("analysis.json");
    names.into_iter().map(|n| out.join(n)).collect()
}

fn write_analysis(out: &Path, report: &AnalyzeReport, k_list: &[usize]) -> io::Result<()> {
    std::fs::create_dir_all(out)?;
    let rows: Vec<Vec<String>> = report
        .elo
        .iter()
        .map(|r| {
            vec![
                r.task_set.clone(),
                r.category.clone(),
                r.model_id.clone(),
                r.rank.to_string(),
                f6(r.elo),
                r.points.map(f6).unwrap_or_default(),
            ]
        })
        .collect();
    write_csv(&out.join("elo.csv"), &strings(["task_set", "category", "model_id", "rank", "elo", "points"]), &rows)?;

    if let Some(wl) = &report.win_loss {
        let mut rows = Vec::new();
        for (i, a) in wl.models.iter().enumerate() {
            for (j, b) in wl.models.iter().enumerate() {
                if i != j {
                    rows.push(vec![
                        a.clone(),
                        b.clone(),
                        wl.wins[i][j].to_string(),
                        wl.wins[j][i].to_string(),
                        wl.ties[i][j].to_string(),
                    ]);
                }
            }
        }
        write_csv(&out.join("win_loss.csv"), &strings(["model_id", "opponent", "wins", "losses", "ties"]), &rows)?;
    }

    if !report.curves.is_empty() {
        let mut rows = Vec::new();
        for (m, set) in &report.curves {
            let groups = set.groups.iter().map(|(g, v)| (g.as_str(), v)).chain([("overall", &set.overall)]);
            for (g, values) in groups {
                for (s, v) in values.iter().enumerate() {
                    rows.push(vec![m.clone(), g.to_string(), (s + 1).to_string(), f6(*v)]);
                }
            }
        }
        write_csv(&out.join("curves.csv"), &strings(["model_id", "group", "step", "value"]), &rows)?;
    }

    if let Some(a) = &report.agreement {
        let mut header = strings(["x", "y", "n", "pearson", "r2", "spearman", "kendall_tau_b", "ccc"]);
        header.extend(k_list.iter().map(|k| format!("top_{k}")));
        header.extend(strings(["bias", "sd", "loa_half_width", "loa_lower", "loa_upper"]));
        let rows: Vec<Vec<String>> = a
            .pairs
            .iter()
            .map(|p| {
                let c = &p.corr;
                let mut row = vec![p.x.clone(), p.y.clone(), c.n.to_string()];
                row.extend([c.pearson, c.r2, c.spearman, c.kendall_tau_b, c.ccc].map(f6));
                row.extend(k_list.iter().map(|&k| c.top(k).map(f6).unwrap_or_default()));
                let b = &p.bland_altman;
                row.extend([b.bias, b.sd, b.loa_half_width, b.lower, b.upper].map(f6));
                row
            })
            .collect();
        write_csv(&out.join("agreement.csv"), &header, &rows)?;
        let mut rows = Vec::new();
        if let Some(r) = &a.reliability {
            rows.push(vec!["cronbach_alpha".to_string(), f6(r.cronbach_alpha)]);
            rows.push(vec!["icc_2_1".to_string(), f6(r.icc_2_1)]);
            rows.push(vec!["targets".to_string(), r.anova.n.to_string()]);
            rows.push(vec!["raters".to_string(), r.anova.k.to_string()]);
            rows.push(vec!["ms_targets".to_string(), f6(r.anova.ms_targets)]);
            rows.push(vec!["ms_raters".to_string(), f6(r.anova.ms_raters)]);
            rows.push(vec!["ms_residual".to_string(), f6(r.anova.ms_residual)]);
        }
        write_csv(&out.join("reliability.csv"), &strings(["statistic", "value"]), &rows)?;
    }
    write_json(&out.join("analysis.json"), report)
}

fn print_analysis(report: &AnalyzeReport, k_list: &[usize]) {
    for r in report.elo.iter().filter(|r| r.category == ALL) {
        println!("elo\t{}\t{}\t{}\t{:.1}", r.task_set, r.rank, r.model_id, r.elo);
    }
    if let Some(a) = &report.agreement {
        for p in &a.pairs {
            let c = &p.corr;
            let tops: Vec<String> =
                k_list.iter().map(|&k| format!("top{k}={}", c.top(k).map_or("-".into(), |v| format!("{v:.2}")))).collect();
            println!(
                "agreement\t{} vs {}\tr={:.3} r2={:.3} rho={:.3} tau_b={:.3} ccc={:.3} {} bias={:.1} loa=±{:.1}",
                p.x,
                p.y,
                c.pearson,
                c.r2,
                c.spearman,
                c.kendall_tau_b,
                c.ccc,
                tops.join(" "),
                p.bland_altman.bias,
                p.bland_altman.loa_half_width
            );
        }
        if let Some(r) = &a.reliability {
            println!("reliability\talpha={:.3} icc(2,1)={:.3}", r.cronbach_alpha, r.icc_2_1);
        }
    }
}

pub fn cmd_stats(cfg: &RunConfig, args: &StatsArgs) -> Result<GenerationStats, CliError> {
    let dir = args.run_dir.clone().unwrap_or_else(|| cfg.workspace.clone());
    let path = dir.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(usage(format!("no manifest at {}", path.display())));
    }
    let (events, skipped) = read_events(&path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    for (line, err) in skipped {
        eprintln!("warning: {} line {line} skipped: {err}", path.display());
    }
    let stats = pipeline_stats(&events);
    println!("{}", serde_json::to_string_pretty(&stats).context("stats")?);
    Ok(stats)
}

fn cmd_env(cfg: &RunConfig, cmd: &EnvCommand) -> Result<u8, CliError> {
    let EnvCommand::Serve { task, steps } = cmd;
    let pkg = load_package(task).map_err(|e| usage(e.to_string()))?;
    let sandbox = sandbox(cfg)?;
    let mut session = EnvSession::open(pkg, *steps, &sandbox).map_err(|e| usage(e.to_string()))?;
    let stdin = io::stdin();
    serve(&mut session, stdin.lock(), io::stdout().lock()).context("stdio session")?;
    Ok(EXIT_OK)
}

pub fn run(cli: &Cli) -> Result<u8, CliError> {
    let cfg = load_config(&cli.global)?;
    match &cli.command {
        Command::Generate(a) => Ok(cmd_generate(&cfg, a)?.exit_code()),
        Command::Verify(a) => Ok(checks_exit_code(&cmd_verify(&cfg, a)?)),
        Command::Validate(a) => Ok(checks_exit_code(&cmd_validate(&cfg, a)?)),
        Command::Evaluate(a) => Ok(cmd_evaluate(&cfg, a)?.exit_code()),
        Command::Analyze(a) => cmd_analyze(&cfg, a).map(|_| EXIT_OK),
        Command::Stats(a) => cmd_stats(&cfg, a).map(|_| EXIT_OK),
        Command::Env(c) => cmd_env(&cfg, c),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            e.exit_code()
        }
    }
}

pub fn main() -> ExitCode {
    // Exit quietly when stdout is closed early, as in `taskforge stats | head`.
    // SAFETY: restores the default disposition before any other thread exists.
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let verbose = std::env::args().filter(|a| a == "-v" || a == "--verbose").count()
        + std::env::args().filter(|a| a.starts_with("-vv")).map(|a| a.len() - 1).sum::<usize>();
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_env("TASKFORGE_LOG")
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(io::stderr).init();
    ExitCode::from(run_args(std::env::args_os()))
}
