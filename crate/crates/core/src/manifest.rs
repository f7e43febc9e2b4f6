//! Append-only run manifest: one JSON event per line, plus a summary
//! document written at the end of a run.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::schema::Defect;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const FROZEN_TIMESTAMP: &str = "1970-01-01T00:00:00Z";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Brainstorm,
    Design,
    PreAssert,
    Refactor,
    PostAssert,
    Review,
    Validation,
    /// Terminal record of a candidate.
    Final,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Brainstorm => "brainstorm",
            Stage::Design => "design",
            Stage::PreAssert => "pre_assert",
            Stage::Refactor => "refactor",
            Stage::PostAssert => "post_assert",
            Stage::Review => "review",
            Stage::Validation => "validation",
            Stage::Final => "final",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEvent {
    pub timestamp: String,
    pub dataset_id: String,
    pub candidate_id: Option<String>,
    pub stage: Stage,
    pub status: String,
    #[serde(default)]
    pub defects: Vec<Defect>,
    /// Seconds, keyed by what was timed.
    #[serde(default)]
    pub timings: BTreeMap<String, f64>,
    #[serde(default)]
    pub cost: f64,
    #[serde(default)]
    pub detail: Value,
}

impl ManifestEvent {
    pub fn new(dataset_id: &str, candidate_id: Option<&str>, stage: Stage, status: impl Into<String>) -> Self {
        Self {
            timestamp: String::new(),
            dataset_id: dataset_id.to_string(),
            candidate_id: candidate_id.map(str::to_string),
            stage,
            status: status.into(),
            defects: Vec::new(),
            timings: BTreeMap::new(),
            cost: 0.0,
            detail: Value::Null,
        }
    }

    pub fn defects(mut self, defects: &[Defect]) -> Self {
        self.defects = defects.to_vec();
        self
    }

    pub fn timing(mut self, name: &str, secs: f64) -> Self {
        self.timings.insert(name.to_string(), secs);
        self
    }

    pub fn cost(mut self, cost: f64) -> Self {
        self.cost = cost;
        self
    }

    pub fn detail(mut self, detail: Value) -> Self {
        self.detail = detail;
        self
    }
}

pub trait EventSink {
    fn emit(&mut self, event: ManifestEvent) -> io::Result<()>;
}

impl EventSink for Vec<ManifestEvent> {
    fn emit(&mut self, event: ManifestEvent) -> io::Result<()> {
        self.push(event);
        Ok(())
    }
}

/// Line-delimited manifest file. Appends are serialized through a mutex and
/// flushed per event, so a crash loses at most the event being written.
#[derive(Debug)]
pub struct Manifest {
    path: PathBuf,
    file: Mutex<File>,
    test_mode: bool,
    redactions: Vec<(String, String)>,
}

impl Manifest {
    /// Opens (or creates) `run_dir/manifest.jsonl` for appending.
    pub fn open(run_dir: &Path, test_mode: bool) -> io::Result<Self> {
        fs::create_dir_all(run_dir)?;
        let path = run_dir.join(MANIFEST_FILE);
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { path, file: Mutex::new(file), test_mode, redactions: Vec::new() })
    }

    /// In test mode, occurrences of `path` in events are replaced by `label`.
    pub fn redact(mut self, path: &Path, label: &str) -> Self {
        let mut forms = vec![path.display().to_string()];
        if let Ok(c) = fs::canonicalize(path) {
            forms.push(c.display().to_string());
        }
        // Longest first so a prefix never shadows a longer form.
        forms.sort_by_key(|f| std::cmp::Reverse(f.len()));
        forms.dedup();
        for f in forms {
            self.redactions.push((f, label.to_string()));
        }
        self.redactions.sort_by_key(|(f, _)| std::cmp::Reverse(f.len()));
        self
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn test_mode(&self) -> bool {
        self.test_mode
    }

    /// The event as it will be written.
    pub fn normalize(&self, mut event: ManifestEvent) -> ManifestEvent {
        if self.test_mode {
            event.timestamp = FROZEN_TIMESTAMP.to_string();
            event.timings.values_mut().for_each(|v| *v = 0.0);
            event.cost = 0.0;
            if let Some(d) = event.detail.as_object_mut() {
                for key in ["cost", "wall_secs"] {
                    if let Some(v) = d.get_mut(key) {
                        *v = serde_json::json!(0.0);
                    }
                }
            }
        } else if event.timestamp.is_empty() {
            event.timestamp = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true);
        }
        event
    }

    /// Applies the registered redactions (test mode only).
    pub fn redact_text(&self, mut text: String) -> String {
        if self.test_mode {
            for (from, to) in &self.redactions {
                text = text.replace(from.as_str(), to);
            }
        }
        text
    }

    pub fn append(&self, event: ManifestEvent) -> io::Result<()> {
        let event = self.normalize(event);
        let mut line = self.redact_text(serde_json::to_string(&event).map_err(io::Error::other)?);
        line.push('\n');
        let mut f = self.file.lock().unwrap_or_else(|e| e.into_inner());
        f.write_all(line.as_bytes())?;
        f.flush()
    }

    pub fn events(&self) -> io::Result<Vec<ManifestEvent>> {
        Ok(read_events(&self.path)?.0)
    }
}

impl EventSink for Manifest {
    fn emit(&mut self, event: ManifestEvent) -> io::Result<()> {
        self.append(event)
    }
}

impl EventSink for &Manifest {
    fn emit(&mut self, event: ManifestEvent) -> io::Result<()> {
        self.append(event)
    }
}

/// `(line number, parse error)` of a manifest line that was skipped.
pub type SkippedLine = (usize, String);

/// Reads a manifest, skipping unparsable lines (e.g. a line cut short by a
/// crash). Returns the events and `(line number, error)` for skipped lines.
pub fn read_events(path: &Path) -> io::Result<(Vec<ManifestEvent>, Vec<SkippedLine>)> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok((Vec::new(), Vec::new())),
        Err(e) => return Err(e),
    };
    let mut events = Vec::new();
    let mut skipped = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(e) => events.push(e),
            Err(err) => {
                tracing::warn!(line = i + 1, "skipping manifest line: {err}");
                skipped.push((i + 1, err.to_string()));
            }
        }
    }
    Ok((events, skipped))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CandidateState {
    pub last_stage: Option<Stage>,
    pub last_status: String,
    /// Events per stage, i.e. attempts for the agent stages.
    pub stage_counts: BTreeMap<Stage, usize>,
    pub terminal: Option<ManifestEvent>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetState {
    pub brainstorm: Option<ManifestEvent>,
    pub candidates: BTreeMap<String, CandidateState>,
}

/// Pipeline state reconstructed from an event log.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunState {
    pub datasets: BTreeMap<String, DatasetState>,
}

impl RunState {
    pub fn replay(events: &[ManifestEvent]) -> Self {
        let mut state = RunState::default();
        for e in events {
            let ds = state.datasets.entry(e.dataset_id.clone()).or_default();
            let Some(cid) = &e.candidate_id else {
                if e.stage == Stage::Brainstorm {
                    ds.brainstorm = Some(e.clone());
                }
                continue;
            };
            let c = ds.candidates.entry(cid.clone()).or_default();
            c.last_stage = Some(e.stage);
            c.last_status = e.status.clone();
            *c.stage_counts.entry(e.stage).or_default() += 1;
            if e.stage == Stage::Final {
                c.terminal = Some(e.clone());
            }
        }
        state
    }

    pub fn terminal(&self, dataset_id: &str, candidate_id: &str) -> Option<&ManifestEvent> {
        self.datasets.get(dataset_id)?.candidates.get(candidate_id)?.terminal.as_ref()
    }

    pub fn brainstorm(&self, dataset_id: &str) -> Option<&ManifestEvent> {
        self.datasets.get(dataset_id)?.brainstorm.as_ref()
    }
}

/// Writes `value` as pretty JSON to `path` atomically.
pub fn write_json(path: &Path, value: &impl Serialize) -> io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    serde_json::to_writer_pretty(&mut tmp, value).map_err(io::Error::other)?;
    tmp.write_all(b"\n")?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
