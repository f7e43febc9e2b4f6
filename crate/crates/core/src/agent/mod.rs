//! Budgeted tool-calling agent loop shared by every role.
//!
//! Each backend turn must be a single JSON object, either a tool call
//! `{"action": "tool", "tool": "read_file", "arguments": {"path": "a.csv"}}`
//! or the final answer `{"action": "final", "payload": {...}}`. Tool results
//! are fed back as the next user message, truncated to the role's
//! observation cap.

mod backend;
mod prompts;
mod structured;
mod tools;

pub use backend::{
    Backend, BackendError, ChatMessage, ChatReply, ChatRequest, RemoteBackend, RemoteConfig, Scenario,
    ScriptedBackend, ScriptedTurn,
};
pub use prompts::{prompt_template, render_prompt};
pub use structured::{
    extract_json, parse_structured_output, validate_payload, ParsedPayload, SchemaId, SchemaViolation,
};
pub use tools::{WorkspaceTools, READ_FILE, RUN_CODE, SHELL, WRITE_FILE};

use std::collections::BTreeMap;
use std::fmt;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const DEFAULT_OBSERVATION_CAP: usize = 16 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Brainstormer,
    Designer,
    Refactor,
    Reviewer,
    Validator,
    Evaluator,
}

impl Role {
    pub const ALL: [Role; 6] =
        [Role::Brainstormer, Role::Designer, Role::Refactor, Role::Reviewer, Role::Validator, Role::Evaluator];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Brainstormer => "brainstormer",
            Role::Designer => "designer",
            Role::Refactor => "refactor",
            Role::Reviewer => "reviewer",
            Role::Validator => "validator",
            Role::Evaluator => "evaluator",
        }
    }

    pub fn default_budget(self) -> usize {
        match self {
            Role::Brainstormer | Role::Designer | Role::Refactor => 30,
            Role::Reviewer | Role::Validator => 10,
            Role::Evaluator => 15,
        }
    }

    pub fn schema(self) -> SchemaId {
        match self {
            Role::Brainstormer => SchemaId::Brainstorm,
            Role::Designer => SchemaId::Design,
            Role::Refactor => SchemaId::Refactor,
            Role::Reviewer => SchemaId::Review,
            Role::Validator => SchemaId::Validation,
            Role::Evaluator => SchemaId::Evaluation,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleConfig {
    pub role: Role,
    pub prompt_template: String,
    pub step_budget: usize,
    pub output_schema: SchemaId,
    /// Byte cap on each tool result fed back to the backend.
    pub observation_cap: usize,
}

impl RoleConfig {
    pub fn new(role: Role) -> Self {
        Self {
            role,
            prompt_template: prompt_template(role).to_string(),
            step_budget: role.default_budget(),
            output_schema: role.schema(),
            observation_cap: DEFAULT_OBSERVATION_CAP,
        }
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.step_budget = budget.max(1);
        self
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub cost: f64,
}

impl AddAssign for Usage {
    fn add_assign(&mut self, rhs: Self) {
        self.prompt_tokens += rhs.prompt_tokens;
        self.completion_tokens += rhs.completion_tokens;
        self.cost += rhs.cost;
    }
}

/// What a tool call produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolResult {
    pub output: String,
    /// Whether the call consumes a budget step.
    pub counted: bool,
    /// The call was refused by policy (e.g. a path outside the workspace).
    pub refused: bool,
    /// No further steps are possible (e.g. the environment budget is spent).
    pub terminal: bool,
}

impl ToolResult {
    pub fn ok(output: impl Into<String>) -> Self {
        Self { output: output.into(), counted: true, refused: false, terminal: false }
    }
    pub fn error(output: impl Into<String>) -> Self {
        Self::ok(format!("error: {}", output.into()))
    }
    pub fn refused(reason: impl Into<String>) -> Self {
        Self { output: format!("refused: {}", reason.into()), counted: true, refused: true, terminal: false }
    }
    pub fn free(mut self) -> Self {
        self.counted = false;
        self
    }
}

pub trait Toolbox {
    /// Tool list rendered into the system prompt.
    fn describe(&self) -> String;
    fn call(&mut self, tool: &str, args: &BTreeMap<String, String>) -> ToolResult;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub tool: String,
    pub arguments: BTreeMap<String, String>,
    pub result: String,
    pub refused: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepKind {
    Tool(ToolCall),
    Final,
    Invalid { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    /// 1-based, strictly increasing.
    pub step_index: usize,
    /// Whether the step consumed budget.
    pub counted: bool,
    pub assistant: String,
    pub kind: StepKind,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum AgentOutcome {
    Completed,
    BudgetExhausted,
    SchemaViolation { field: String, message: String, raw: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub role: Role,
    pub episode: String,
    pub step_budget: usize,
    pub steps: Vec<Step>,
    pub final_payload: Option<Value>,
    pub unknown_fields: Vec<String>,
    pub outcome: AgentOutcome,
    pub usage: Usage,
}

impl Transcript {
    pub fn counted_steps(&self) -> usize {
        self.steps.iter().filter(|s| s.counted).count()
    }

    pub fn tool_calls(&self) -> impl Iterator<Item = &ToolCall> {
        self.steps.iter().filter_map(|s| match &s.kind {
            StepKind::Tool(call) => Some(call),
            _ => None,
        })
    }

    pub fn succeeded(&self) -> bool {
        self.outcome == AgentOutcome::Completed
    }
}

enum Action {
    Tool { tool: String, arguments: BTreeMap<String, String> },
    Final(Value),
}

fn parse_action(content: &str) -> Result<Action, String> {
    let v = extract_json(content).ok_or("reply contains no JSON object")?;
    let obj = v.as_object().ok_or("reply must be a JSON object")?;
    let action = obj.get("action").and_then(Value::as_str);
    if action == Some("final") || (action.is_none() && obj.contains_key("final")) {
        let payload = obj.get("payload").or_else(|| obj.get("final")).cloned().unwrap_or(Value::Null);
        return Ok(Action::Final(payload));
    }
    let tool = obj
        .get("tool")
        .and_then(Value::as_str)
        .ok_or("expected {\"action\": \"tool\", \"tool\": ...} or {\"action\": \"final\", \"payload\": ...}")?;
    let mut arguments = BTreeMap::new();
    match obj.get("arguments") {
        None | Some(Value::Null) => {}
        Some(Value::Object(map)) => {
            for (k, v) in map {
                let text = match v {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                arguments.insert(k.clone(), text);
            }
        }
        Some(_) => return Err("`arguments` must be an object".into()),
    }
    Ok(Action::Tool { tool: tool.to_string(), arguments })
}

/// Runs one agent episode. Alternates backend turns and tool executions until
/// a valid final payload arrives or `step_budget` counted steps are spent.
///
/// Only transport failures are errors; budget exhaustion and schema
/// violations are reported in [`Transcript::outcome`].
pub fn run_agent(
    config: &RoleConfig,
    backend: &mut dyn Backend,
    tools: &mut dyn Toolbox,
    context: &str,
    episode: &str,
) -> Result<Transcript, BackendError> {
    let system = render_prompt(config, &tools.describe());
    let mut messages = vec![ChatMessage::system(system), ChatMessage::user(context)];
    let mut transcript = Transcript {
        role: config.role,
        episode: episode.to_string(),
        step_budget: config.step_budget,
        steps: Vec::new(),
        final_payload: None,
        unknown_fields: Vec::new(),
        outcome: AgentOutcome::BudgetExhausted,
        usage: Usage::default(),
    };
    // Uncounted steps (free info requests) are bounded separately.
    let max_turns = config.step_budget * 4 + 8;
    let mut counted = 0;
    let mut turn = 0;
    while counted < config.step_budget && turn < max_turns {
        let reply = backend.complete(&ChatRequest { episode, turn, messages: &messages })?;
        turn += 1;
        transcript.usage += reply.usage;
        let step_index = transcript.steps.len() + 1;
        let content = reply.content;
        match parse_action(&content) {
            Ok(Action::Final(payload)) => {
                transcript.steps.push(Step {
                    step_index,
                    counted: true,
                    assistant: content.clone(),
                    kind: StepKind::Final,
                    cost: reply.usage.cost,
                });
                match validate_payload(payload, config.output_schema, &content) {
                    Ok(parsed) => {
                        transcript.final_payload = Some(parsed.value);
                        transcript.unknown_fields = parsed.unknown_fields;
                        transcript.outcome = AgentOutcome::Completed;
                    }
                    Err(v) => {
                        transcript.outcome =
                            AgentOutcome::SchemaViolation { field: v.field, message: v.message, raw: v.raw };
                    }
                }
                return Ok(transcript);
            }
            Ok(Action::Tool { tool, arguments }) => {
                let result = tools.call(&tool, &arguments);
                let observation = crate::util::truncate_text(&result.output, config.observation_cap);
                if result.counted {
                    counted += 1;
                }
                transcript.steps.push(Step {
                    step_index,
                    counted: result.counted,
                    assistant: content.clone(),
                    kind: StepKind::Tool(ToolCall {
                        tool: tool.clone(),
                        arguments,
                        result: observation.clone(),
                        refused: result.refused,
                    }),
                    cost: reply.usage.cost,
                });
                messages.push(ChatMessage::assistant(content));
                messages.push(ChatMessage::user(format!(
                    "Observation from {tool} (step {counted} of {}):\n{observation}",
                    config.step_budget
                )));
                if result.terminal {
                    break;
                }
            }
            Err(error) => {
                counted += 1;
                transcript.steps.push(Step {
                    step_index,
                    counted: true,
                    assistant: content.clone(),
                    kind: StepKind::Invalid { error: error.clone() },
                    cost: reply.usage.cost,
                });
                messages.push(ChatMessage::assistant(content));
                messages.push(ChatMessage::user(format!(
                    "Your reply could not be used: {error}. Reply with exactly one JSON action object."
                )));
            }
        }
    }
    Ok(transcript)
}
