//! Structured payload schemas and their validation.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaId {
    Brainstorm,
    Design,
    Refactor,
    Review,
    Validation,
    Evaluation,
}

impl SchemaId {
    pub fn as_str(self) -> &'static str {
        match self {
            SchemaId::Brainstorm => "brainstorm",
            SchemaId::Design => "design",
            SchemaId::Refactor => "refactor",
            SchemaId::Review => "review",
            SchemaId::Validation => "validation",
            SchemaId::Evaluation => "evaluation",
        }
    }

    fn fields(self) -> &'static [Field] {
        match self {
            SchemaId::Brainstorm => BRAINSTORM,
            SchemaId::Design => DESIGN,
            SchemaId::Refactor => REFACTOR,
            SchemaId::Review => REVIEW,
            SchemaId::Validation | SchemaId::Evaluation => SUMMARY,
        }
    }

    /// A JSON skeleton of the payload for prompts.
    pub fn skeleton(self) -> String {
        let v = skeleton_obj(self.fields());
        serde_json::to_string_pretty(&v).expect("skeleton serializes")
    }
}

impl fmt::Display for SchemaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy)]
enum Kind {
    Str,
    /// A string or a number, e.g. `"lower"` or `-1`.
    StrOrNum,
    Obj(&'static [Field]),
    Arr(&'static Kind),
}

#[derive(Debug, Clone, Copy)]
struct Field {
    name: &'static str,
    kind: Kind,
    required: bool,
    hint: &'static str,
}

const fn req(name: &'static str, kind: Kind, hint: &'static str) -> Field {
    Field { name, kind, required: true, hint }
}

const fn opt(name: &'static str, kind: Kind, hint: &'static str) -> Field {
    Field { name, kind, required: false, hint }
}

const METRIC: &[Field] = &[
    opt("name", Kind::Str, "metric name, e.g. accuracy"),
    opt("direction", Kind::StrOrNum, "higher or lower"),
    opt("definition", Kind::Str, "how the score is computed"),
];

const PROPOSAL: &[Field] = &[
    req("prediction_target", Kind::Str, "what is predicted"),
    req("evaluation_metric", Kind::Obj(METRIC), ""),
    req("data_utilization", Kind::Str, "which files and columns are used, and how they are split"),
    req("justification", Kind::Str, "why the task is meaningful and feasible"),
];

const BRAINSTORM: &[Field] = &[req("proposals", Kind::Arr(&Kind::Obj(PROPOSAL)), "")];

const DESIGN_META: &[Field] = &[
    opt("modality", Kind::Str, "tabular|image|video|audio|text|time-series|other"),
    opt("objective", Kind::Str, "e.g. classification"),
    opt("domain", Kind::Str, "e.g. finance"),
    opt("metric_name", Kind::Str, "e.g. accuracy"),
    req("metric_direction", Kind::StrOrNum, "+1 (higher is better) or -1"),
];

const DESIGN: &[Field] = &[
    req("prepare_script", Kind::Str, "path of the preparation script"),
    req("metric_script", Kind::Str, "path of the grader script"),
    req("description", Kind::Str, "path of the task description"),
    req("sample_submission", Kind::Str, "path of the sample submission"),
    req("test_answer", Kind::Str, "path of the hidden test answer"),
    req("selftest_script", Kind::Str, "path of the self-test script"),
    opt("raw_dir", Kind::Str, "directory holding the raw data (default raw/)"),
    opt("public_dir", Kind::Str, "directory of agent-visible files"),
    opt("private_dir", Kind::Str, "directory of hidden files"),
    opt("public_description", Kind::Str, "agent-visible description path"),
    req("metadata", Kind::Obj(DESIGN_META), ""),
];

const REFACTOR: &[Field] = &[
    req("package_root", Kind::Str, "directory of the unified package, e.g. competition"),
    opt("summary", Kind::Str, "what was changed"),
];

const FINDING: &[Field] = &[
    req("aspect", Kind::Str, "description-clarity|metric-appropriateness|shortcut-risk|leakage"),
    req("note", Kind::Str, "what is wrong and where"),
];

const REVIEW: &[Field] = &[
    req("verdict", Kind::Str, "accept|revise|reject"),
    req("findings", Kind::Arr(&Kind::Obj(FINDING)), ""),
];

const SUMMARY: &[Field] = &[opt("summary", Kind::Str, "short account of what was done")];

fn skeleton_obj(fields: &[Field]) -> Value {
    let mut map = serde_json::Map::new();
    for f in fields {
        map.insert(f.name.to_string(), skeleton_kind(&f.kind, f.hint));
    }
    Value::Object(map)
}

fn skeleton_kind(kind: &Kind, hint: &str) -> Value {
    match kind {
        Kind::Str | Kind::StrOrNum => Value::String(format!("<{hint}>")),
        Kind::Obj(fields) => skeleton_obj(fields),
        Kind::Arr(inner) => Value::Array(vec![skeleton_kind(inner, hint)]),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedPayload {
    pub value: Value,
    /// Dotted paths of fields the schema does not declare.
    pub unknown_fields: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("schema violation at `{path}`: {message}")]
pub struct SchemaViolation {
    /// Name of the offending field, or `empty` / `json` for unparsable text.
    pub field: String,
    pub path: String,
    pub message: String,
    pub raw: String,
}

impl SchemaViolation {
    fn new(field: &str, path: &str, message: impl Into<String>, raw: &str) -> Self {
        Self { field: field.into(), path: path.into(), message: message.into(), raw: raw.into() }
    }
}

/// First JSON value in `raw`, tolerating surrounding prose and code fences.
pub fn extract_json(raw: &str) -> Option<Value> {
    let start = raw.find(['{', '['])?;
    let mut stream = serde_json::Deserializer::from_str(&raw[start..]).into_iter::<Value>();
    stream.next()?.ok()
}

pub fn parse_structured_output(raw: &str, schema: SchemaId) -> Result<ParsedPayload, SchemaViolation> {
    if raw.trim().is_empty() {
        return Err(SchemaViolation::new("empty", "", "no output", raw));
    }
    let value = extract_json(raw).ok_or_else(|| SchemaViolation::new("json", "", "no JSON object found", raw))?;
    validate_payload(value, schema, raw)
}

/// Checks presence and primitive type of every declared field.
pub fn validate_payload(value: Value, schema: SchemaId, raw: &str) -> Result<ParsedPayload, SchemaViolation> {
    if value.is_null() {
        return Err(SchemaViolation::new("empty", "", "null payload", raw));
    }
    let mut unknown = Vec::new();
    check_obj(&value, schema.fields(), "", raw, &mut unknown)?;
    Ok(ParsedPayload { value, unknown_fields: unknown })
}

fn join(path: &str, name: &str) -> String {
    if path.is_empty() {
        name.to_string()
    } else {
        format!("{path}.{name}")
    }
}

fn check_obj(
    value: &Value,
    fields: &[Field],
    path: &str,
    raw: &str,
    unknown: &mut Vec<String>,
) -> Result<(), SchemaViolation> {
    let Some(map) = value.as_object() else {
        let field = path.rsplit('.').next().filter(|s| !s.is_empty()).unwrap_or("payload");
        return Err(SchemaViolation::new(field, path, "expected an object", raw));
    };
    for f in fields {
        let p = join(path, f.name);
        match map.get(f.name) {
            None | Some(Value::Null) if f.required => {
                return Err(SchemaViolation::new(f.name, &p, "missing required field", raw));
            }
            None | Some(Value::Null) => {}
            Some(v) => check_kind(v, &f.kind, f.name, &p, raw, unknown)?,
        }
    }
    for key in map.keys() {
        if !fields.iter().any(|f| f.name == key) {
            unknown.push(join(path, key));
        }
    }
    Ok(())
}

fn check_kind(
    v: &Value,
    kind: &Kind,
    name: &str,
    path: &str,
    raw: &str,
    unknown: &mut Vec<String>,
) -> Result<(), SchemaViolation> {
    match kind {
        Kind::Str if v.is_string() => Ok(()),
        Kind::StrOrNum if v.is_string() || v.is_number() => Ok(()),
        Kind::Obj(fields) => check_obj(v, fields, path, raw, unknown).map_err(|mut e| {
            if e.path == path {
                e.field = name.to_string();
            }
            e
        }),
        Kind::Arr(inner) => {
            let items = v
                .as_array()
                .ok_or_else(|| SchemaViolation::new(name, path, "expected an array", raw))?;
            for (i, item) in items.iter().enumerate() {
                check_kind(item, inner, name, &format!("{path}[{i}]"), raw, unknown)?;
            }
            Ok(())
        }
        Kind::Str => Err(SchemaViolation::new(name, path, "expected a string", raw)),
        Kind::StrOrNum => Err(SchemaViolation::new(name, path, "expected a string or number", raw)),
    }
}
