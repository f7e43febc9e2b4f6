//! Unified task package model and the deterministic assertion layer.
//!
//! A refactored package looks like this on disk:
//!
//! ```text
//! <root>/
//!   prepare.py  metric.py  description.txt  task_meta.toml
//!   data/raw/...
//!   data/public/{description.txt, sample_submission.csv, data_structure.txt?}
//!   data/private/test_answer.csv
//! ```
//!
//! Drafts produced by the designer may use any layout; their paths are
//! declared explicitly through [`PackageTree::declared`].

mod assertions;
mod meta;
mod scripts;

pub use assertions::{
    assert_contracts, assert_contracts_at, assert_structure, assert_structure_at, route_for,
    validate_submission, AssertionLevel, SubmissionVerdict,
};
pub use meta::{direction_from_str, parse_direction, MetaError, Modality, TaskMeta, META_FILE};
pub use scripts::{grade, parse_score_line, run_grader, run_prepare, GradeOutcome};

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// One mandated entry of the unified layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Entry {
    PrepareScript,
    MetricScript,
    Description,
    RawDir,
    PublicDir,
    PublicDescription,
    SampleSubmission,
    TestAnswer,
}

impl Entry {
    pub const MANDATED: [Entry; 8] = [
        Entry::PrepareScript,
        Entry::MetricScript,
        Entry::Description,
        Entry::RawDir,
        Entry::PublicDir,
        Entry::PublicDescription,
        Entry::SampleSubmission,
        Entry::TestAnswer,
    ];

    /// Path relative to a unified package root.
    pub fn label(self) -> &'static str {
        match self {
            Entry::PrepareScript => "prepare.py",
            Entry::MetricScript => "metric.py",
            Entry::Description => "description.txt",
            Entry::RawDir => "data/raw/",
            Entry::PublicDir => "data/public/",
            Entry::PublicDescription => "data/public/description.txt",
            Entry::SampleSubmission => "data/public/sample_submission.csv",
            Entry::TestAnswer => "data/private/test_answer.csv",
        }
    }

    pub fn is_dir(self) -> bool {
        matches!(self, Entry::RawDir | Entry::PublicDir)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryState {
    Missing,
    /// A zero-byte file.
    Empty,
    Present,
}

impl EntryState {
    pub fn probe(path: &Path, is_dir: bool) -> Self {
        match fs::metadata(path) {
            Ok(m) if is_dir && m.is_dir() => EntryState::Present,
            Ok(m) if !is_dir && m.is_file() && m.len() == 0 => EntryState::Empty,
            Ok(m) if !is_dir && m.is_file() => EntryState::Present,
            _ => EntryState::Missing,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackageTree {
    pub root: PathBuf,
    pub raw_dir: PathBuf,
    pub public_dir: PathBuf,
    pub private_dir: PathBuf,
    pub prepare_script: PathBuf,
    pub metric_script: PathBuf,
    pub description: PathBuf,
    pub public_description: PathBuf,
    pub sample_submission: PathBuf,
    pub test_answer: PathBuf,
    pub data_structure: Option<PathBuf>,
    /// Entry states observed when the tree was built.
    pub states: BTreeMap<Entry, EntryState>,
}

/// Paths a designer declares for a draft, relative to its workspace.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DeclaredPaths {
    pub prepare_script: String,
    pub metric_script: String,
    pub description: String,
    pub sample_submission: String,
    pub test_answer: String,
    pub raw_dir: Option<String>,
    pub public_dir: Option<String>,
    pub private_dir: Option<String>,
    pub public_description: Option<String>,
}

impl PackageTree {
    /// The unified layout under `root`.
    pub fn unified(root: &Path) -> Self {
        let data = root.join("data");
        let public = data.join("public");
        let ds = public.join("data_structure.txt");
        let mut tree = Self {
            root: root.to_path_buf(),
            raw_dir: data.join("raw"),
            private_dir: data.join("private"),
            prepare_script: root.join("prepare.py"),
            metric_script: root.join("metric.py"),
            description: root.join("description.txt"),
            public_description: public.join("description.txt"),
            sample_submission: public.join("sample_submission.csv"),
            test_answer: data.join("private").join("test_answer.csv"),
            data_structure: ds.is_file().then_some(ds),
            public_dir: public,
            states: BTreeMap::new(),
        };
        tree.refresh();
        tree
    }

    /// A draft tree with designer-declared paths. Directories default to the
    /// parents of the files they hold.
    pub fn declared(root: &Path, paths: &DeclaredPaths) -> Self {
        let at = |p: &str| root.join(p.trim_start_matches('/'));
        let sample = at(&paths.sample_submission);
        let answer = at(&paths.test_answer);
        let public_dir = paths
            .public_dir
            .as_deref()
            .map(at)
            .unwrap_or_else(|| sample.parent().unwrap_or(root).to_path_buf());
        let private_dir = paths
            .private_dir
            .as_deref()
            .map(at)
            .unwrap_or_else(|| answer.parent().unwrap_or(root).to_path_buf());
        let public_description = paths
            .public_description
            .as_deref()
            .map(at)
            .unwrap_or_else(|| public_dir.join("description.txt"));
        let ds = public_dir.join("data_structure.txt");
        let mut tree = Self {
            root: root.to_path_buf(),
            raw_dir: paths.raw_dir.as_deref().map(at).unwrap_or_else(|| root.join("raw")),
            prepare_script: at(&paths.prepare_script),
            metric_script: at(&paths.metric_script),
            description: at(&paths.description),
            public_description,
            sample_submission: sample,
            test_answer: answer,
            data_structure: ds.is_file().then_some(ds),
            public_dir,
            private_dir,
            states: BTreeMap::new(),
        };
        tree.refresh();
        tree
    }

    pub fn path(&self, entry: Entry) -> &Path {
        match entry {
            Entry::PrepareScript => &self.prepare_script,
            Entry::MetricScript => &self.metric_script,
            Entry::Description => &self.description,
            Entry::RawDir => &self.raw_dir,
            Entry::PublicDir => &self.public_dir,
            Entry::PublicDescription => &self.public_description,
            Entry::SampleSubmission => &self.sample_submission,
            Entry::TestAnswer => &self.test_answer,
        }
    }

    /// Re-probes every mandated entry on disk.
    pub fn refresh(&mut self) {
        self.states = Entry::MANDATED
            .iter()
            .map(|&e| (e, EntryState::probe(self.path(e), e.is_dir())))
            .collect();
    }

    pub fn state(&self, entry: Entry) -> EntryState {
        self.states.get(&entry).copied().unwrap_or(EntryState::Missing)
    }

    pub fn present(&self) -> Vec<Entry> {
        Entry::MANDATED.into_iter().filter(|&e| self.state(e) == EntryState::Present).collect()
    }

    pub fn is_complete(&self) -> bool {
        self.present().len() == Entry::MANDATED.len()
    }

    /// Human-readable label of `entry` relative to the root.
    pub fn display(&self, entry: Entry) -> String {
        let p = self.path(entry);
        let rel = p.strip_prefix(&self.root).unwrap_or(p).display().to_string();
        if entry.is_dir() && !rel.ends_with('/') {
            format!("{rel}/")
        } else {
            rel
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PackageStatus {
    Draft,
    Refactored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPackage {
    pub root: PathBuf,
    pub dataset_id: String,
    pub task_id: String,
    pub metadata: TaskMeta,
    pub tree: PackageTree,
    pub status: PackageStatus,
}

impl TaskPackage {
    /// Metric direction, defaulting to higher-is-better when the metadata
    /// does not say.
    pub fn direction(&self) -> taskforge_analytics::Direction {
        self.metadata
            .metric_direction
            .unwrap_or(taskforge_analytics::Direction::HigherIsBetter)
    }

    /// A draft package with designer-declared paths.
    pub fn draft(root: &Path, paths: &DeclaredPaths, metadata: TaskMeta) -> Self {
        let tree = PackageTree::declared(root, paths);
        Self {
            root: root.to_path_buf(),
            dataset_id: metadata.dataset_id.clone().unwrap_or_else(|| "unknown".into()),
            task_id: metadata.task_id.clone().unwrap_or_else(|| dir_name(root)),
            metadata,
            tree,
            status: PackageStatus::Draft,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("cannot read package root {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Metadata { path: PathBuf, source: MetaError },
}

fn dir_name(root: &Path) -> String {
    fs::canonicalize(root)
        .ok()
        .as_deref()
        .unwrap_or(root)
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "task".into())
}

/// Reads a package root laid out in the unified format.
pub fn load_package(root: impl AsRef<Path>) -> Result<TaskPackage, LoadError> {
    let root = root.as_ref();
    fs::read_dir(root).map_err(|source| LoadError::Io { path: root.to_path_buf(), source })?;
    // Scripts run from their own directory; every path handed to them must be absolute.
    let root = &std::path::absolute(root).map_err(|source| LoadError::Io { path: root.to_path_buf(), source })?;
    let meta_path = root.join(META_FILE);
    let metadata = match fs::read_to_string(&meta_path) {
        Ok(text) => TaskMeta::parse(&text)
            .map_err(|source| LoadError::Metadata { path: meta_path.clone(), source })?,
        Err(e) if e.kind() == io::ErrorKind::NotFound => TaskMeta::default(),
        Err(source) => return Err(LoadError::Io { path: meta_path, source }),
    };
    let tree = PackageTree::unified(root);
    let status = if tree.is_complete() { PackageStatus::Refactored } else { PackageStatus::Draft };
    Ok(TaskPackage {
        root: root.to_path_buf(),
        dataset_id: metadata.dataset_id.clone().unwrap_or_else(|| "unknown".into()),
        task_id: metadata.task_id.clone().unwrap_or_else(|| dir_name(root)),
        metadata,
        tree,
        status,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DefectCode {
    #[serde(rename = "E_STRUCT_MISSING")]
    StructMissing,
    #[serde(rename = "E_STRUCT_EXTRA_FORBIDDEN")]
    StructExtraForbidden,
    #[serde(rename = "E_CONTRACT_PREPARE")]
    ContractPrepare,
    #[serde(rename = "E_CONTRACT_METRIC")]
    ContractMetric,
    #[serde(rename = "E_CONTRACT_ARTIFACTS")]
    ContractArtifacts,
    #[serde(rename = "E_LEAKAGE")]
    Leakage,
    #[serde(rename = "E_SUBMISSION_FORMAT")]
    SubmissionFormat,
}

impl DefectCode {
    pub const ALL: [DefectCode; 7] = [
        DefectCode::StructMissing,
        DefectCode::StructExtraForbidden,
        DefectCode::ContractPrepare,
        DefectCode::ContractMetric,
        DefectCode::ContractArtifacts,
        DefectCode::Leakage,
        DefectCode::SubmissionFormat,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DefectCode::StructMissing => "E_STRUCT_MISSING",
            DefectCode::StructExtraForbidden => "E_STRUCT_EXTRA_FORBIDDEN",
            DefectCode::ContractPrepare => "E_CONTRACT_PREPARE",
            DefectCode::ContractMetric => "E_CONTRACT_METRIC",
            DefectCode::ContractArtifacts => "E_CONTRACT_ARTIFACTS",
            DefectCode::Leakage => "E_LEAKAGE",
            DefectCode::SubmissionFormat => "E_SUBMISSION_FORMAT",
        }
    }
}

impl fmt::Display for DefectCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DefectCode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DefectCode::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown defect code {s:?}"))
    }
}

/// Stage authorized to fix a defect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RouteTo {
    Designer,
    Refactor,
    Reject,
}

impl fmt::Display for RouteTo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RouteTo::Designer => "designer",
            RouteTo::Refactor => "refactor",
            RouteTo::Reject => "reject",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Defect {
    pub code: DefectCode,
    pub detail: String,
    pub route_to: RouteTo,
}

impl Defect {
    pub fn new(code: DefectCode, detail: impl Into<String>, route_to: RouteTo) -> Self {
        Self { code, detail: detail.into(), route_to }
    }
}

impl fmt::Display for Defect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{}] {}", self.code, self.route_to, self.detail)
    }
}

/// Scores observed while checking the grader contract.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractScores {
    pub sample: f64,
    pub answer: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VerificationReport {
    pub passed: bool,
    pub defects: Vec<Defect>,
    /// Non-failing observations, such as an exact sample/answer score tie.
    pub notes: Vec<String>,
    pub scores: Option<ContractScores>,
}

impl VerificationReport {
    pub fn passing() -> Self {
        Self { passed: true, ..Default::default() }
    }

    pub fn push(&mut self, defect: Defect) {
        self.passed = false;
        self.defects.push(defect);
    }

    pub fn codes(&self) -> Vec<DefectCode> {
        let mut codes: Vec<DefectCode> = self.defects.iter().map(|d| d.code).collect();
        codes.sort();
        codes.dedup();
        codes
    }

    pub fn has(&self, code: DefectCode) -> bool {
        self.defects.iter().any(|d| d.code == code)
    }

    /// Whether any defect must go back to the designer.
    pub fn needs_designer(&self) -> bool {
        self.defects.iter().any(|d| d.route_to == RouteTo::Designer)
    }

    /// Plain-text rendering fed back to an agent on retry.
    pub fn feedback(&self) -> String {
        if self.passed {
            return "All assertions passed.".into();
        }
        let mut out = String::from("The previous attempt failed these checks:\n");
        for d in &self.defects {
            out.push_str(&format!("- {}: {}\n", d.code, d.detail));
        }
        out
    }
}
