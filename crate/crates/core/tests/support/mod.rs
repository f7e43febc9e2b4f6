#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use taskforge::sandbox::{Sandbox, SandboxLimits};
use taskforge::schema::DefectCode;
use taskforge::util::copy_dir;
use tempfile::TempDir;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn task_fixture(name: &str) -> PathBuf {
    fixtures().join("tasks").join(name)
}

/// A fresh copy of a fixture task in its own temp dir; the package root is
/// `<tmp>/competition`.
pub fn copy_task(name: &str) -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("competition");
    copy_dir(&task_fixture(name), &root).unwrap();
    (dir, root)
}

pub fn sandbox_in(dir: &Path) -> Sandbox {
    let limits = SandboxLimits::default()
        .with_working_dir(dir.join("work"))
        .with_timeout(Duration::from_secs(60));
    Sandbox::new(limits).unwrap().with_seed(7)
}

/// Single-edit mutations of the golden fixture, one per defect code.
pub const MUTATIONS: [(DefectCode, &str); 7] = [
    (DefectCode::StructMissing, "delete data/private/test_answer.csv"),
    (DefectCode::StructExtraForbidden, "add data/public/test_answer.csv"),
    (DefectCode::ContractPrepare, "rename def prepare"),
    (DefectCode::ContractMetric, "rename class Metric"),
    (DefectCode::ContractArtifacts, "prepare writes the sample under another name"),
    (DefectCode::Leakage, "copy the answer into public/"),
    (DefectCode::SubmissionFormat, "change the sample submission header"),
];

fn replace_once(path: &Path, from: &str, to: &str) {
    let text = fs::read_to_string(path).unwrap();
    assert_eq!(text.matches(from).count(), 1, "{from:?} in {}", path.display());
    fs::write(path, text.replacen(from, to, 1)).unwrap();
}

pub fn apply_mutation(root: &Path, code: DefectCode) {
    let public = root.join("data/public");
    match code {
        DefectCode::StructMissing => fs::remove_file(root.join("data/private/test_answer.csv")).unwrap(),
        DefectCode::StructExtraForbidden => fs::write(public.join("test_answer.csv"), "placeholder\n").unwrap(),
        DefectCode::ContractPrepare => replace_once(&root.join("prepare.py"), "def prepare(", "def build_split("),
        DefectCode::ContractMetric => {
            replace_once(&root.join("metric.py"), "class Metric(", "class AccuracyMetric(")
        }
        DefectCode::ContractArtifacts => replace_once(
            &root.join("prepare.py"),
            "\"sample_submission.csv\"",
            "\"sample.csv\"",
        ),
        DefectCode::Leakage => {
            fs::copy(root.join("data/private/test_answer.csv"), public.join("labels.csv")).unwrap();
        }
        DefectCode::SubmissionFormat => {
            replace_once(&public.join("sample_submission.csv"), "id,label", "id,target")
        }
    }
}

/// Fits a one-feature threshold on `x1` and writes `submission.csv`.
pub const THRESHOLD_MODEL: &str = r#"import csv
train = list(csv.DictReader(open("public/train.csv")))
test = list(csv.DictReader(open("public/test.csv")))
best = max((sum((float(r["x1"]) > t) == (r["label"] == "1") for r in train), t)
           for t in sorted(float(r["x1"]) for r in train))[1]
with open("submission.csv", "w") as f:
    f.write("id,label\n")
    for r in test:
        f.write("%s,%d\n" % (r["id"], float(r["x1"]) > best))
print("threshold", best)
"#;

pub const COPY_SAMPLE: &str = "import shutil\nshutil.copy('public/sample_submission.csv', 'submission.csv')\n";

/// A copied fixture package, loaded, with a sandbox under the same temp dir.
pub fn load_task(name: &str) -> (TempDir, taskforge::schema::TaskPackage, Sandbox) {
    let (dir, root) = copy_task(name);
    let pkg = taskforge::schema::load_package(&root).unwrap();
    let sandbox = sandbox_in(dir.path());
    (dir, pkg, sandbox)
}

pub fn scenario_json(name: &str) -> serde_json::Value {
    let path = fixtures().join("scenarios").join(format!("{name}.json"));
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

pub fn scripted(scenario: serde_json::Value) -> taskforge::agent::ScriptedBackend {
    taskforge::agent::ScriptedBackend::new(serde_json::from_value(scenario).unwrap()).with_seed(7)
}

pub fn dataset(name: &str) -> PathBuf {
    fixtures().join("datasets").join(name)
}
