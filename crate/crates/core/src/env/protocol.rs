use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{EnvSession, ExecutionFeedback};

/// One request line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verb", rename_all = "snake_case")]
pub enum Request {
    RequestInfo { key: String },
    ExecuteCode { code: String },
}

/// One response line; `error` is set for malformed requests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feedback: Option<ExecutionFeedback>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub step_count: usize,
    pub step_budget: usize,
    pub done: bool,
}

/// Serves line-delimited JSON requests until end of input. Blank lines are
/// ignored; every other line gets exactly one response line.
pub fn serve(session: &mut EnvSession, input: impl BufRead, mut output: impl Write) -> io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (feedback, error) = match serde_json::from_str::<Request>(&line) {
            Ok(Request::RequestInfo { key }) => (Some(session.request_info(&key)), None),
            Ok(Request::ExecuteCode { code }) => (Some(session.execute_code(&code)), None),
            Err(e) => (None, Some(format!("malformed request: {e}"))),
        };
        let resp = Response {
            feedback,
            error,
            step_count: session.step_count,
            step_budget: session.step_budget,
            done: session.exhausted(),
        };
        serde_json::to_writer(&mut output, &resp)?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}
