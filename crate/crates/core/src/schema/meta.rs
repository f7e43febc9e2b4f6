//! The `task_meta.toml` file at a package root.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use taskforge_analytics::Direction;

pub const META_FILE: &str = "task_meta.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Modality {
    Tabular,
    Image,
    Video,
    Audio,
    Text,
    TimeSeries,
    Other,
    Unknown,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Tabular => "tabular",
            Modality::Image => "image",
            Modality::Video => "video",
            Modality::Audio => "audio",
            Modality::Text => "text",
            Modality::TimeSeries => "time-series",
            Modality::Other => "other",
            Modality::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "tabular" => Modality::Tabular,
            "image" => Modality::Image,
            "video" => Modality::Video,
            "audio" => Modality::Audio,
            "text" => Modality::Text,
            "time-series" | "timeseries" => Modality::TimeSeries,
            "other" => Modality::Other,
            "unknown" | "" => Modality::Unknown,
            other => return Err(format!("unknown modality {other:?}")),
        })
    }
}

/// Tags describing a task. Missing tags read as `"unknown"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMeta {
    pub task_id: Option<String>,
    pub dataset_id: Option<String>,
    pub modality: Modality,
    pub objective: String,
    pub domain: String,
    pub metric_name: String,
    pub metric_direction: Option<Direction>,
    /// Keys this crate does not interpret, kept verbatim for round trips.
    pub extra: BTreeMap<String, String>,
}

impl Default for TaskMeta {
    fn default() -> Self {
        Self {
            task_id: None,
            dataset_id: None,
            modality: Modality::Unknown,
            objective: "unknown".into(),
            domain: "unknown".into(),
            metric_name: "unknown".into(),
            metric_direction: None,
            extra: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("metadata field `{field}`: {message}")]
pub struct MetaError {
    pub field: String,
    pub message: String,
}

impl MetaError {
    fn new(field: &str, message: impl Into<String>) -> Self {
        Self { field: field.to_string(), message: message.into() }
    }
}

/// Accepts `1`/`-1`, `"+1"`/`"-1"`, `"higher"`/`"lower"` and `"max"`/`"min"`.
pub fn parse_direction(value: &toml::Value) -> Result<Direction, String> {
    match value {
        toml::Value::Integer(i) => {
            Direction::from_sign(*i).ok_or_else(|| format!("expected +1 or -1, found {i}"))
        }
        toml::Value::String(s) => direction_from_str(s),
        other => Err(format!("expected +1, -1, \"higher\" or \"lower\", found {}", other.type_str())),
    }
}

pub fn direction_from_str(s: &str) -> Result<Direction, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "+1" | "higher" | "max" | "maximize" | "higher_is_better" => Ok(Direction::HigherIsBetter),
        "-1" | "lower" | "min" | "minimize" | "lower_is_better" => Ok(Direction::LowerIsBetter),
        other => Err(format!("unrecognized direction {other:?}")),
    }
}

impl TaskMeta {
    pub fn parse(text: &str) -> Result<Self, MetaError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
            let field = e
                .span()
                .map(|s| offending_key(text, s.start))
                .unwrap_or_else(|| "<syntax>".to_string());
            MetaError::new(&field, e.message().to_string())
        })?;
        let mut meta = TaskMeta::default();
        for (key, value) in table {
            let text_value = |field: &str| -> Result<String, MetaError> {
                value
                    .as_str()
                    .map(|s| s.trim().to_string())
                    .ok_or_else(|| MetaError::new(field, format!("expected a string, found {}", value.type_str())))
            };
            match key.as_str() {
                "task_id" => meta.task_id = Some(text_value("task_id")?),
                "dataset_id" => meta.dataset_id = Some(text_value("dataset_id")?),
                "modality" => {
                    meta.modality = text_value("modality")?
                        .parse()
                        .map_err(|m| MetaError::new("modality", m))?
                }
                "objective" => meta.objective = non_empty(text_value("objective")?),
                "domain" => meta.domain = non_empty(text_value("domain")?),
                "metric_name" => meta.metric_name = non_empty(text_value("metric_name")?),
                "metric_direction" => {
                    meta.metric_direction =
                        Some(parse_direction(&value).map_err(|m| MetaError::new("metric_direction", m))?)
                }
                _ => {
                    let rendered = match &value {
                        toml::Value::String(s) => s.clone(),
                        v => v.to_string(),
                    };
                    meta.extra.insert(key, rendered);
                }
            }
        }
        Ok(meta)
    }

    pub fn to_toml(&self) -> String {
        let mut out = String::new();
        let q = |s: &str| toml::Value::String(s.to_string()).to_string();
        if let Some(id) = &self.task_id {
            out.push_str(&format!("task_id = {}\n", q(id)));
        }
        if let Some(id) = &self.dataset_id {
            out.push_str(&format!("dataset_id = {}\n", q(id)));
        }
        out.push_str(&format!("modality = {}\n", q(self.modality.as_str())));
        out.push_str(&format!("objective = {}\n", q(&self.objective)));
        out.push_str(&format!("domain = {}\n", q(&self.domain)));
        out.push_str(&format!("metric_name = {}\n", q(&self.metric_name)));
        if let Some(d) = self.metric_direction {
            out.push_str(&format!("metric_direction = {}\n", d.sign()));
        }
        for (k, v) in &self.extra {
            out.push_str(&format!("{k} = {}\n", q(v)));
        }
        out
    }
}

fn non_empty(s: String) -> String {
    if s.is_empty() {
        "unknown".into()
    } else {
        s
    }
}

/// Best-effort name of the key on the line containing byte `offset`.
fn offending_key(text: &str, offset: usize) -> String {
    let start = text[..offset.min(text.len())].rfind('\n').map_or(0, |i| i + 1);
    let line = text[start..].lines().next().unwrap_or("");
    match line.split_once('=') {
        Some((key, _)) if !key.trim().is_empty() => key.trim().to_string(),
        _ => format!("line {}", text[..start].matches('\n').count() + 1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_fields() {
        let m = TaskMeta::parse(
            "modality = \"time_series\"\nobjective = \"forecasting\"\ndomain = \"energy\"\n\
             metric_name = \"mae\"\nmetric_direction = \"lower\"\nowner = \"x\"\n",
        )
        .unwrap();
        assert_eq!(m.modality, Modality::TimeSeries);
        assert_eq!(m.metric_direction, Some(Direction::LowerIsBetter));
        assert_eq!(m.extra["owner"], "x");
        let back = TaskMeta::parse(&m.to_toml()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn bad_direction_names_field() {
        let err = TaskMeta::parse("metric_direction = 2\n").unwrap_err();
        assert_eq!(err.field, "metric_direction");
        let err = TaskMeta::parse("modality = \"smell\"\n").unwrap_err();
        assert_eq!(err.field, "modality");
    }

    #[test]
    fn syntax_error_names_line_key() {
        let err = TaskMeta::parse("domain = \"a\"\nobjective = \n").unwrap_err();
        assert_eq!(err.field, "objective");
    }

    #[test]
    fn defaults_are_unknown() {
        let m = TaskMeta::parse("").unwrap();
        assert_eq!(m.modality, Modality::Unknown);
        assert_eq!(m.domain, "unknown");
        assert_eq!(m.metric_direction, None);
    }
}
