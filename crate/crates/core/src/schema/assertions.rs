//! Structural and contract assertions over task packages.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::scripts::{grade, run_prepare, GradeOutcome};
use super::{ContractScores, Defect, DefectCode, Entry, EntryState, RouteTo, TaskPackage, VerificationReport};
use crate::sandbox::Sandbox;
use crate::util::{path_key, tree_digest, PathLock};

const DETAIL_CAP: usize = 2048;

/// Which stage's rules apply. Drafts skip the entry-point signature checks
/// and route every defect back to the designer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AssertionLevel {
    PreRefactor,
    PostRefactor,
}

/// Routing table. `entry` names the missing file for structural defects.
pub fn route_for(code: DefectCode, entry: Option<Entry>, level: AssertionLevel) -> RouteTo {
    if level == AssertionLevel::PreRefactor {
        return RouteTo::Designer;
    }
    match code {
        DefectCode::StructMissing => match entry {
            Some(Entry::TestAnswer | Entry::SampleSubmission | Entry::RawDir) => RouteTo::Designer,
            _ => RouteTo::Refactor,
        },
        DefectCode::StructExtraForbidden
        | DefectCode::ContractPrepare
        | DefectCode::ContractMetric
        | DefectCode::ContractArtifacts => RouteTo::Refactor,
        DefectCode::Leakage | DefectCode::SubmissionFormat => RouteTo::Designer,
    }
}

fn defect(code: DefectCode, detail: impl Into<String>, level: AssertionLevel) -> Defect {
    Defect::new(code, detail, route_for(code, None, level))
}

pub fn assert_structure(pkg: &TaskPackage) -> VerificationReport {
    assert_structure_at(pkg, AssertionLevel::PostRefactor)
}

/// Every mandated entry must exist (files with non-zero size), and no file
/// named like the hidden answer may live outside the private directory.
pub fn assert_structure_at(pkg: &TaskPackage, level: AssertionLevel) -> VerificationReport {
    let tree = &pkg.tree;
    let mut report = VerificationReport::passing();
    for entry in Entry::MANDATED {
        let label = tree.display(entry);
        let detail = match EntryState::probe(tree.path(entry), entry.is_dir()) {
            EntryState::Present => continue,
            EntryState::Missing => label,
            EntryState::Empty => format!("{label}: empty file"),
        };
        report.push(Defect::new(
            DefectCode::StructMissing,
            detail,
            route_for(DefectCode::StructMissing, Some(entry), level),
        ));
    }
    for stray in forbidden_extras(pkg) {
        let rel = stray.strip_prefix(&pkg.root).unwrap_or(&stray).display().to_string();
        report.push(defect(
            DefectCode::StructExtraForbidden,
            format!("{rel}: answer file outside the private directory"),
            level,
        ));
    }
    report
}

fn forbidden_extras(pkg: &TaskPackage) -> Vec<PathBuf> {
    let tree = &pkg.tree;
    let skip = [&tree.private_dir, &tree.raw_dir];
    let answer_name = tree.test_answer.file_name().map(|n| n.to_ascii_lowercase());
    let mut out = Vec::new();
    let walk = walkdir::WalkDir::new(&pkg.root)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| !skip.iter().any(|s| e.path() == s.as_path()));
    for entry in walk.flatten() {
        if !entry.file_type().is_file() || entry.path() == tree.test_answer {
            continue;
        }
        let name = entry.file_name().to_ascii_lowercase();
        if name == "test_answer.csv" || Some(&name) == answer_name.as_ref() {
            out.push(entry.path().to_path_buf());
        }
    }
    out
}

fn prepare_signature_ok(source: &str) -> Result<(), String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"(?m)^def\s+prepare\s*\(([^)]*)\)").unwrap());
    let caps = re.captures(source).ok_or("no top-level `def prepare(...)` found")?;
    let params = caps[1]
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty() && *p != "*" && *p != "/")
        .count();
    if params < 3 {
        return Err(format!("`prepare` takes {params} parameters; expected raw, public and private"));
    }
    Ok(())
}

fn metric_class_ok(source: &str) -> Result<(), String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"(?m)^class\s+Metric\s*\(([^)]*)\)\s*:").unwrap());
    let caps = re.captures(source).ok_or("no top-level `class Metric(...)` found")?;
    if !caps[1].contains("CompetitionMetric") {
        return Err("`Metric` does not inherit from CompetitionMetric".into());
    }
    Ok(())
}

pub fn assert_contracts(pkg: &TaskPackage, sandbox: &Sandbox) -> VerificationReport {
    assert_contracts_at(pkg, sandbox, AssertionLevel::PostRefactor)
}

/// Structure first; if that fails no script runs. Otherwise checks the entry
/// points, runs preparation twice into scratch directories, grades the sample
/// submission and the answer, and looks for answer content under public/.
pub fn assert_contracts_at(pkg: &TaskPackage, sandbox: &Sandbox, level: AssertionLevel) -> VerificationReport {
    let mut report = assert_structure_at(pkg, level);
    if !report.passed {
        return report;
    }
    let _lock = match PathLock::acquire(&pkg.root, "contracts") {
        Ok(lock) => lock,
        Err(e) => {
            report.push(defect(DefectCode::ContractPrepare, format!("cannot lock package root: {e}"), level));
            return report;
        }
    };
    let tree = &pkg.tree;

    let mut prepare_ok = true;
    let mut metric_ok = true;
    if level == AssertionLevel::PostRefactor {
        let src = fs::read_to_string(&tree.prepare_script).unwrap_or_default();
        if let Err(msg) = prepare_signature_ok(&src) {
            report.push(defect(DefectCode::ContractPrepare, format!("{}: {msg}", tree.display(Entry::PrepareScript)), level));
            prepare_ok = false;
        }
        let src = fs::read_to_string(&tree.metric_script).unwrap_or_default();
        if let Err(msg) = metric_class_ok(&src) {
            report.push(defect(DefectCode::ContractMetric, format!("{}: {msg}", tree.display(Entry::MetricScript)), level));
            metric_ok = false;
        }
    }
    let Some(direction) = pkg.metadata.metric_direction else {
        report.push(defect(DefectCode::ContractMetric, "metric_direction missing from metadata", level));
        return report;
    };

    if prepare_ok {
        check_preparation(pkg, sandbox, level, &mut report);
    }

    if metric_ok {
        let sample = match grade(pkg, sandbox, &tree.sample_submission) {
            Ok(GradeOutcome::Score { value }) => Some(value),
            Ok(GradeOutcome::Rejected { message }) => {
                report.push(defect(
                    DefectCode::SubmissionFormat,
                    format!("grader rejects the sample submission: {message}"),
                    level,
                ));
                None
            }
            Ok(other) => {
                report.push(defect(DefectCode::ContractMetric, grader_failure("sample submission", &other), level));
                None
            }
            Err(e) => {
                report.push(defect(DefectCode::ContractMetric, format!("cannot run grader: {e}"), level));
                None
            }
        };
        let answer = match grade(pkg, sandbox, &tree.test_answer) {
            Ok(GradeOutcome::Score { value }) => Some(value),
            Ok(GradeOutcome::Rejected { message }) => {
                report.push(defect(DefectCode::ContractMetric, format!("grader rejects the test answer: {message}"), level));
                None
            }
            Ok(other) => {
                report.push(defect(DefectCode::ContractMetric, grader_failure("test answer", &other), level));
                None
            }
            Err(e) => {
                report.push(defect(DefectCode::ContractMetric, format!("cannot run grader: {e}"), level));
                None
            }
        };
        if let (Some(s), Some(a)) = (sample, answer) {
            if direction.better(s, a) {
                report.push(defect(
                    DefectCode::ContractMetric,
                    format!("test answer scores {a}, worse than the sample submission's {s} under {direction:?}"),
                    level,
                ));
            } else if s == a {
                report.notes.push(format!("sample submission and test answer tie at {s}"));
            }
            report.scores = Some(ContractScores { sample: s, answer: a });
        }
    }

    if let Some(leak) = find_leak(&tree.test_answer, &tree.public_dir) {
        let rel = leak.strip_prefix(&pkg.root).unwrap_or(&leak).display().to_string();
        report.push(defect(DefectCode::Leakage, format!("{rel} contains the test answer"), level));
    }
    report
}

fn grader_failure(what: &str, outcome: &GradeOutcome) -> String {
    match outcome {
        GradeOutcome::TimedOut => format!("grader timed out on the {what}"),
        GradeOutcome::Crashed { message } => format!("grader crashed on the {what}: {message}"),
        GradeOutcome::Score { value } => format!("grader returned {value} on the {what}"),
        GradeOutcome::Rejected { message } => format!("grader rejected the {what}: {message}"),
    }
}

fn check_preparation(pkg: &TaskPackage, sandbox: &Sandbox, level: AssertionLevel, report: &mut VerificationReport) {
    let tree = &pkg.tree;
    let scratch = match sandbox.scratch_dir(&format!("contract-{:016x}", path_key(&pkg.root))) {
        Ok(dir) => dir,
        Err(e) => {
            report.push(defect(DefectCode::ContractPrepare, format!("cannot create scratch directory: {e}"), level));
            return;
        }
    };
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let public = scratch.join(name).join("public");
        let private = scratch.join(name).join("private");
        if let Err(e) = fs::create_dir_all(&public).and_then(|_| fs::create_dir_all(&private)) {
            report.push(defect(DefectCode::ContractPrepare, format!("cannot create scratch directory: {e}"), level));
            return;
        }
        match run_prepare(sandbox, &tree.prepare_script, &tree.raw_dir, &public, &private) {
            Ok(out) if out.success() => runs.push((public, private)),
            Ok(out) if out.timed_out() => {
                report.push(defect(
                    DefectCode::ContractPrepare,
                    format!("preparation timed out\n{}", out.summary(DETAIL_CAP)),
                    level,
                ));
                break;
            }
            Ok(out) => {
                report.push(defect(
                    DefectCode::ContractPrepare,
                    format!("preparation failed: {}", out.summary(DETAIL_CAP)),
                    level,
                ));
                break;
            }
            Err(e) => {
                report.push(defect(DefectCode::ContractPrepare, format!("cannot run preparation: {e}"), level));
                break;
            }
        }
    }
    if runs.len() == 2 {
        let digest = |(p, q): &(PathBuf, PathBuf)| (tree_digest(p).unwrap_or_default(), tree_digest(q).unwrap_or_default());
        let (a, b) = (digest(&runs[0]), digest(&runs[1]));
        if a != b {
            let mut differing: Vec<String> = Vec::new();
            for (side, x, y) in [("public", &a.0, &b.0), ("private", &a.1, &b.1)] {
                for key in x.keys().chain(y.keys()) {
                    if x.get(key) != y.get(key) && !differing.contains(&format!("{side}/{key}")) {
                        differing.push(format!("{side}/{key}"));
                    }
                }
            }
            report.push(defect(
                DefectCode::ContractPrepare,
                format!("preparation is not deterministic; differing outputs: {}", differing.join(", ")),
                level,
            ));
        }
        let (public, private) = &runs[0];
        let expected = [
            (public.join(rel_in(&tree.sample_submission, &tree.public_dir)), tree.display(Entry::SampleSubmission)),
            (private.join(rel_in(&tree.test_answer, &tree.private_dir)), tree.display(Entry::TestAnswer)),
        ];
        for (path, label) in expected {
            if EntryState::probe(&path, false) != EntryState::Present {
                report.push(defect(
                    DefectCode::ContractArtifacts,
                    format!("preparation did not produce {label}"),
                    level,
                ));
            }
        }
        if report.passed && tree_digest(public).ok() != tree_digest(&tree.public_dir).ok() {
            report.notes.push("on-disk public directory differs from a fresh preparation run".into());
        }
    }
    let _ = fs::remove_dir_all(&scratch);
}

fn rel_in<'a>(path: &'a Path, dir: &Path) -> &'a Path {
    path.strip_prefix(dir)
        .unwrap_or_else(|_| Path::new(path.file_name().unwrap_or_default()))
}

/// A public file leaks the answer if it equals it byte for byte, or if it
/// contains every non-header line of it.
fn find_leak(answer: &Path, public_dir: &Path) -> Option<PathBuf> {
    let answer_bytes = fs::read(answer).ok().filter(|b| !b.is_empty())?;
    let answer_text = String::from_utf8_lossy(&answer_bytes);
    let answer_lines: Vec<&str> = answer_text
        .lines()
        .skip(1)
        .map(|l| l.trim_end_matches('\r'))
        .filter(|l| !l.trim().is_empty())
        .collect();
    for entry in walkdir::WalkDir::new(public_dir).sort_by_file_name().into_iter().flatten() {
        if !entry.file_type().is_file() {
            continue;
        }
        let Ok(bytes) = fs::read(entry.path()) else { continue };
        if bytes == answer_bytes {
            return Some(entry.path().to_path_buf());
        }
        if answer_lines.is_empty() {
            continue;
        }
        let text = String::from_utf8_lossy(&bytes);
        let lines: std::collections::HashSet<&str> = text.lines().map(|l| l.trim_end_matches('\r')).collect();
        if answer_lines.iter().all(|l| lines.contains(l)) {
            return Some(entry.path().to_path_buf());
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum SubmissionVerdict {
    Score { value: f64 },
    Rejected { message: String },
}

/// Grades a submission file. A grader crash is a contract defect, not a
/// rejection.
pub fn validate_submission(pkg: &TaskPackage, submission: &Path, sandbox: &Sandbox) -> Result<SubmissionVerdict, Defect> {
    let level = AssertionLevel::PostRefactor;
    match grade(pkg, sandbox, submission) {
        Ok(GradeOutcome::Score { value }) => Ok(SubmissionVerdict::Score { value }),
        Ok(GradeOutcome::Rejected { message }) => Ok(SubmissionVerdict::Rejected { message }),
        Ok(other) => Err(defect(DefectCode::ContractMetric, grader_failure("submission", &other), level)),
        Err(e) => Err(defect(DefectCode::ContractMetric, format!("cannot run grader: {e}"), level)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prepare_signature() {
        assert!(prepare_signature_ok("def prepare(raw, public, private, seed=7):\n").is_ok());
        assert!(prepare_signature_ok("def prepare(raw, public):\n").is_err());
        assert!(prepare_signature_ok("def prep(raw, public, private):\n").is_err());
        assert!(prepare_signature_ok("    def prepare(a, b, c):\n").is_err());
    }

    #[test]
    fn metric_class() {
        assert!(metric_class_ok("class Metric(CompetitionMetric):\n").is_ok());
        assert!(metric_class_ok("class Metric(taskforge_grading.CompetitionMetric):\n").is_ok());
        assert!(metric_class_ok("class Metric(object):\n").is_err());
        assert!(metric_class_ok("class Grader(CompetitionMetric):\n").is_err());
    }

    #[test]
    fn pre_refactor_routes_to_designer() {
        for code in DefectCode::ALL {
            assert_eq!(route_for(code, None, AssertionLevel::PreRefactor), RouteTo::Designer);
        }
        assert_eq!(
            route_for(DefectCode::StructMissing, Some(Entry::MetricScript), AssertionLevel::PostRefactor),
            RouteTo::Refactor
        );
        assert_eq!(
            route_for(DefectCode::StructMissing, Some(Entry::TestAnswer), AssertionLevel::PostRefactor),
            RouteTo::Designer
        );
    }

    #[test]
    fn leak_by_line_containment() {
        let dir = tempfile::tempdir().unwrap();
        let public = dir.path().join("public");
        fs::create_dir_all(&public).unwrap();
        let answer = dir.path().join("answer.csv");
        fs::write(&answer, "id,label\n1,0\n2,1\n").unwrap();
        fs::write(public.join("train.csv"), "id,label\n5,1\n1,0\n").unwrap();
        assert_eq!(find_leak(&answer, &public), None);
        fs::write(public.join("notes.txt"), "look: 2,1\nand 1,0\n1,0\n2,1\n").unwrap();
        assert_eq!(find_leak(&answer, &public), Some(public.join("notes.txt")));
    }
}
