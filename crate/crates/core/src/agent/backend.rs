//! Model backends: deterministic scripted replay and a remote
//! chat-completion client.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Deserializer, Serialize};
use serde_json::{json, Value};

use super::Usage;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: "system".into(), content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: "user".into(), content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: "assistant".into(), content: content.into() }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ChatRequest<'a> {
    /// Episode key, e.g. `designer/candidate_2`. Scripted backends use it to
    /// pick the replay; remote backends ignore it.
    pub episode: &'a str,
    /// Zero-based turn number within the episode.
    pub turn: usize,
    pub messages: &'a [ChatMessage],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatReply {
    pub content: String,
    pub usage: Usage,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("backend error: {message}")]
pub struct BackendError {
    pub message: String,
    /// Whether repeating the same request may succeed.
    pub retryable: bool,
}

impl BackendError {
    pub fn fatal(message: impl Into<String>) -> Self {
        Self { message: message.into(), retryable: false }
    }
    pub fn transient(message: impl Into<String>) -> Self {
        Self { message: message.into(), retryable: true }
    }
}

pub trait Backend {
    fn complete(&mut self, request: &ChatRequest<'_>) -> Result<ChatReply, BackendError>;
    fn model_id(&self) -> &str;
}

/// One scripted model turn.
///
/// In scenario files a turn is either a plain string (used verbatim), an
/// object with a `content` string, or an action object such as
/// `{"tool": "read_file", "arguments": {...}}` that is serialized as the reply.
/// Optional `cost`, `prompt_tokens` and `completion_tokens` keys set the
/// reported usage.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedTurn {
    pub content: String,
    pub usage: Usage,
}

impl<'de> Deserialize<'de> for ScriptedTurn {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(d)?;
        Ok(match value {
            Value::String(s) => ScriptedTurn { content: s, usage: Usage::default() },
            Value::Object(mut map) => {
                let mut usage = Usage::default();
                if let Some(c) = map.remove("cost") {
                    usage.cost = c.as_f64().unwrap_or(0.0);
                }
                if let Some(t) = map.remove("prompt_tokens") {
                    usage.prompt_tokens = t.as_u64().unwrap_or(0);
                }
                if let Some(t) = map.remove("completion_tokens") {
                    usage.completion_tokens = t.as_u64().unwrap_or(0);
                }
                let content = match map.get("content") {
                    Some(Value::String(s)) if map.len() == 1 => s.clone(),
                    _ => Value::Object(map).to_string(),
                };
                ScriptedTurn { content, usage }
            }
            other => ScriptedTurn { content: other.to_string(), usage: Usage::default() },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct Scenario {
    #[serde(default = "default_model_id")]
    pub model_id: String,
    /// Episode key -> episodes, each a list of turns, consumed in order.
    pub episodes: BTreeMap<String, Vec<Vec<ScriptedTurn>>>,
}

fn default_model_id() -> String {
    "scripted".into()
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::fatal(format!("cannot read scenario {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| BackendError::fatal(format!("malformed scenario {}: {e}", path.display())))
    }
}

/// Replays a [`Scenario`]. Fully deterministic: the reply depends only on
/// the episode key, the turn number and how many episodes of that key have
/// already started.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    scenario: Scenario,
    seed: u64,
    /// Resolved key -> number of episodes started.
    started: BTreeMap<String, usize>,
    /// Request episode -> (resolved key, episode index).
    active: BTreeMap<String, (String, usize)>,
}

impl ScriptedBackend {
    pub fn new(scenario: Scenario) -> Self {
        Self { scenario, seed: 0, started: BTreeMap::new(), active: BTreeMap::new() }
    }

    /// `{{seed}}` in scripted content is replaced with this value.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Most specific scenario key for `episode`: the episode itself, then
    /// successively shorter `/`-separated prefixes.
    fn resolve(&self, episode: &str) -> Option<String> {
        let mut key = episode;
        loop {
            if self.scenario.episodes.contains_key(key) {
                return Some(key.to_string());
            }
            key = &key[..key.rfind('/')?];
        }
    }
}

impl Backend for ScriptedBackend {
    fn complete(&mut self, req: &ChatRequest<'_>) -> Result<ChatReply, BackendError> {
        if req.turn == 0 || !self.active.contains_key(req.episode) {
            let key = self
                .resolve(req.episode)
                .ok_or_else(|| BackendError::fatal(format!("no scripted episodes for {:?}", req.episode)))?;
            let n = self.started.entry(key.clone()).or_default();
            self.active.insert(req.episode.to_string(), (key, *n));
            *n += 1;
        }
        let (key, idx) = &self.active[req.episode];
        let episode = self.scenario.episodes[key]
            .get(*idx)
            .ok_or_else(|| BackendError::fatal(format!("scripted episodes for {key:?} exhausted")))?;
        let turn = episode.get(req.turn).ok_or_else(|| {
            BackendError::fatal(format!("scripted episode {key:?}#{idx} has no turn {}", req.turn))
        })?;
        Ok(ChatReply { content: turn.content.replace("{{seed}}", &self.seed.to_string()), usage: turn.usage })
    }

    fn model_id(&self) -> &str {
        &self.scenario.model_id
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    /// Base URL; `/chat/completions` is appended.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub temperature: f64,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub prompt_price_per_1k: f64,
    pub completion_price_per_1k: f64,
    pub seed: Option<u64>,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1".into(),
            model: "gpt-4o-mini".into(),
            api_key_env: "TASKFORGE_API_KEY".into(),
            temperature: 1.0,
            timeout_secs: 120.0,
            max_retries: 3,
            prompt_price_per_1k: 0.0,
            completion_price_per_1k: 0.0,
            seed: None,
        }
    }
}

/// OpenAI-compatible chat-completion client.
pub struct RemoteBackend {
    config: RemoteConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    backoff: Duration,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::fatal(format!("cannot build HTTP client: {e}")))?;
        Ok(Self { config, api_key, client, backoff: Duration::from_millis(500) })
    }

    /// Base delay between retries; doubled after each failure.
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    fn send_once(&self, messages: &[ChatMessage]) -> Result<ChatReply, BackendError> {
        let url = format!("{}/chat/completions", self.config.endpoint.trim_end_matches('/'));
        let mut body = json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": self.config.temperature,
        });
        if let Some(seed) = self.config.seed {
            body["seed"] = json!(seed);
        }
        let mut req = self.client.post(&url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| BackendError::transient(format!("request to {url} failed: {e}")))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| BackendError::transient(format!("reading response: {e}")))?;
        if !status.is_success() {
            let msg = format!("{url} returned {status}: {}", crate::util::truncate_text(&text, 512));
            return Err(if status.is_server_error() || status.as_u16() == 429 {
                BackendError::transient(msg)
            } else {
                BackendError::fatal(msg)
            });
        }
        let v: Value =
            serde_json::from_str(&text).map_err(|e| BackendError::fatal(format!("malformed response body: {e}")))?;
        let content = v["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| BackendError::fatal("response has no choices[0].message.content"))?
            .to_string();
        let prompt_tokens = v["usage"]["prompt_tokens"].as_u64().unwrap_or(0);
        let completion_tokens = v["usage"]["completion_tokens"].as_u64().unwrap_or(0);
        let cost = prompt_tokens as f64 / 1000.0 * self.config.prompt_price_per_1k
            + completion_tokens as f64 / 1000.0 * self.config.completion_price_per_1k;
        Ok(ChatReply { content, usage: Usage { prompt_tokens, completion_tokens, cost } })
    }
}

impl Backend for RemoteBackend {
    fn complete(&mut self, req: &ChatRequest<'_>) -> Result<ChatReply, BackendError> {
        let mut delay = self.backoff;
        let mut attempt = 0;
        loop {
            match self.send_once(req.messages) {
                Err(e) if e.retryable && attempt < self.config.max_retries => {
                    tracing::warn!(attempt, error = %e.message, "retrying backend request");
                    std::thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    fn model_id(&self) -> &str {
        &self.config.model
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(json: &str) -> ScriptedBackend {
        ScriptedBackend::new(serde_json::from_str(json).unwrap())
    }

    fn ask(b: &mut ScriptedBackend, episode: &str, turn: usize) -> Result<String, BackendError> {
        b.complete(&ChatRequest { episode, turn, messages: &[] }).map(|r| r.content)
    }

    #[test]
    fn turn_forms() {
        let mut b = scenario(
            r#"{"episodes": {"r": [["plain", {"content": "wrapped"}, {"tool": "shell", "arguments": {"command": "ls"}, "cost": 0.5}]]}}"#,
        );
        assert_eq!(ask(&mut b, "r", 0).unwrap(), "plain");
        assert_eq!(ask(&mut b, "r", 1).unwrap(), "wrapped");
        let r = b.complete(&ChatRequest { episode: "r", turn: 2, messages: &[] }).unwrap();
        assert_eq!(r.content, r#"{"arguments":{"command":"ls"},"tool":"shell"}"#);
        assert_eq!(r.usage.cost, 0.5);
    }

    #[test]
    fn episodes_resolve_by_prefix_and_advance() {
        let mut b = scenario(r#"{"episodes": {"designer": [["a"], ["b"]], "designer/candidate_2": [["special"]]}}"#);
        assert_eq!(ask(&mut b, "designer/candidate_1", 0).unwrap(), "a");
        assert_eq!(ask(&mut b, "designer/candidate_2", 0).unwrap(), "special");
        assert_eq!(ask(&mut b, "designer/candidate_3", 0).unwrap(), "b");
        assert!(ask(&mut b, "designer/candidate_4", 0).is_err());
        assert!(ask(&mut b, "brainstormer", 0).is_err());
    }

    #[test]
    fn seed_substitution() {
        let mut b = scenario(r#"{"episodes": {"x": [["seed={{seed}}"]]}}"#).with_seed(11);
        assert_eq!(ask(&mut b, "x", 0).unwrap(), "seed=11");
    }
}
