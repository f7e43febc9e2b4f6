mod support;

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::time::Duration;

use proptest::prelude::*;
use serde_json::json;
use taskforge::agent::{
    run_agent, AgentOutcome, Backend, ChatRequest, RemoteBackend, RemoteConfig, Role, RoleConfig, Scenario,
    ScriptedBackend, StepKind, Toolbox, WorkspaceTools,
};

fn backend(episodes: serde_json::Value) -> ScriptedBackend {
    let scenario: Scenario = serde_json::from_value(json!({ "episodes": episodes })).unwrap();
    ScriptedBackend::new(scenario)
}

fn review_final() -> serde_json::Value {
    json!({"action": "final", "payload": {"verdict": "accept", "findings": []}, "cost": 0.25})
}

fn workspace() -> (tempfile::TempDir, WorkspaceTools) {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().join("ws");
    std::fs::create_dir_all(&ws).unwrap();
    std::fs::write(ws.join("data.csv"), "a,b\n1,2\n").unwrap();
    let tools = WorkspaceTools::new(&ws, support::sandbox_in(dir.path())).unwrap();
    (dir, tools)
}

#[test]
fn payload_at_third_step() {
    let (_d, mut tools) = workspace();
    let read = json!({"action": "tool", "tool": "read_file", "arguments": {"path": "data.csv"}, "cost": 0.25});
    let mut b = backend(json!({"reviewer": [[read, read, review_final()]]}));
    let t = run_agent(&RoleConfig::new(Role::Reviewer), &mut b, &mut tools, "review", "reviewer").unwrap();
    assert_eq!(t.steps.len(), 3);
    assert_eq!(t.outcome, AgentOutcome::Completed);
    assert!(t.final_payload.is_some());
    assert_eq!(t.usage.cost, 0.75);
    assert_eq!(t.steps.iter().map(|s| s.step_index).collect::<Vec<_>>(), vec![1, 2, 3]);
    match &t.steps[0].kind {
        StepKind::Tool(call) => assert_eq!(call.result, "a,b\n1,2\n"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn budget_exhaustion_after_exact_budget() {
    let (_d, mut tools) = workspace();
    let read = json!({"tool": "read_file", "arguments": {"path": "data.csv"}});
    let mut b = backend(json!({"reviewer": [vec![read; 20]]}));
    let cfg = RoleConfig::new(Role::Reviewer).with_budget(5);
    let t = run_agent(&cfg, &mut b, &mut tools, "", "reviewer").unwrap();
    assert_eq!(t.outcome, AgentOutcome::BudgetExhausted);
    assert_eq!(t.steps.len(), 5);
    assert!(t.final_payload.is_none());
}

#[test]
fn confinement_refusals_do_not_stop_the_loop() {
    let (dir, mut tools) = workspace();
    std::fs::write(dir.path().join("outside.txt"), "secret").unwrap();
    std::os::unix::fs::symlink(dir.path().join("outside.txt"), dir.path().join("ws/link.txt")).unwrap();
    let mut b = backend(json!({"designer": [[
        {"tool": "read_file", "arguments": {"path": "/etc/passwd"}},
        {"tool": "read_file", "arguments": {"path": "../outside.txt"}},
        {"tool": "read_file", "arguments": {"path": "link.txt"}},
        {"tool": "write_file", "arguments": {"path": "../escape.txt", "content": "x"}},
        {"tool": "write_file", "arguments": {"path": "sub/ok.txt", "content": "fine"}},
        {"action": "final", "payload": {}}
    ]]}));
    let t = run_agent(&RoleConfig::new(Role::Designer), &mut b, &mut tools, "", "designer").unwrap();
    let refused: Vec<bool> = t.tool_calls().map(|c| c.refused).collect();
    assert_eq!(refused, vec![true, true, true, true, false]);
    assert!(!dir.path().join("escape.txt").exists());
    assert_eq!(std::fs::read_to_string(dir.path().join("ws/sub/ok.txt")).unwrap(), "fine");
    // The empty design payload is a schema violation naming the first field.
    match t.outcome {
        AgentOutcome::SchemaViolation { field, raw, .. } => {
            assert_eq!(field, "prepare_script");
            assert!(raw.contains("\"final\""));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn unparsable_replies_consume_steps() {
    let (_d, mut tools) = workspace();
    let mut b = backend(json!({"reviewer": [["thinking...", "still thinking", review_final()]]}));
    let t = run_agent(&RoleConfig::new(Role::Reviewer), &mut b, &mut tools, "", "reviewer").unwrap();
    assert_eq!(t.counted_steps(), 3);
    assert!(matches!(t.steps[0].kind, StepKind::Invalid { .. }));
    assert!(t.succeeded());
}

#[test]
fn shell_and_code_run_in_the_workspace() {
    let (_d, mut tools) = workspace();
    let mut args = BTreeMap::new();
    args.insert("command".to_string(), "cat data.csv | wc -l".to_string());
    let r = tools.call("shell", &args);
    assert!(r.output.contains("exit status 0"), "{}", r.output);
    assert!(r.output.contains('2'));
    let mut args = BTreeMap::new();
    args.insert("code".to_string(), "import os\nprint(sorted(os.listdir('.')))".to_string());
    let r = tools.call("run_code", &args);
    assert!(r.output.contains("['data.csv']"), "{}", r.output);
}

#[test]
fn read_only_tools() {
    let (_d, tools) = workspace();
    let mut tools = tools.read_only();
    let mut args = BTreeMap::new();
    args.insert("path".to_string(), "x".to_string());
    args.insert("content".to_string(), "y".to_string());
    assert!(tools.call("write_file", &args).refused);
    assert!(!tools.describe().contains("write_file"));
}

#[test]
fn replay_is_byte_identical() {
    let episodes = json!({"reviewer": [[
        {"tool": "read_file", "arguments": {"path": "data.csv"}},
        {"tool": "shell", "arguments": {"command": "echo {{seed}}"}},
        review_final()
    ]]});
    let run = || {
        let (_d, mut tools) = workspace();
        let mut b = backend(episodes.clone()).with_seed(3);
        let t = run_agent(&RoleConfig::new(Role::Reviewer), &mut b, &mut tools, "ctx", "reviewer").unwrap();
        serde_json::to_string(&t).unwrap()
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn smaller_budget_never_lengthens(budget in 1usize..8, shrink in 0usize..8, final_at in 0usize..10) {
        let mut turns: Vec<serde_json::Value> =
            vec![json!({"tool": "read_file", "arguments": {"path": "data.csv"}}); final_at];
        turns.push(review_final());
        let len = |b: usize| {
            let (_d, mut tools) = workspace();
            let mut be = backend(json!({"reviewer": [turns.clone()]}));
            let cfg = RoleConfig::new(Role::Reviewer).with_budget(b);
            let t = run_agent(&cfg, &mut be, &mut tools, "", "reviewer").unwrap();
            assert!(t.counted_steps() <= b);
            let per_turn: f64 = t.steps.iter().map(|s| s.cost).sum();
            assert!((per_turn - t.usage.cost).abs() < 1e-12);
            t.steps.len()
        };
        let small = budget.saturating_sub(shrink).max(1);
        prop_assert!(len(small) <= len(budget));
    }
}

/// Serves canned HTTP responses, one per connection, and returns the
/// request bodies it saw.
fn mock_server(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let handle = std::thread::spawn(move || {
        let mut bodies = Vec::new();
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut len = 0usize;
            let mut auth = String::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if lower.starts_with("authorization:") {
                    auth = line.trim().to_string();
                }
            }
            let mut buf = vec![0u8; len];
            reader.read_exact(&mut buf).unwrap();
            bodies.push(format!("{auth}\n{}", String::from_utf8(buf).unwrap()));
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
        bodies
    });
    (url, handle)
}

fn completion(content: &str) -> String {
    json!({"choices": [{"message": {"role": "assistant", "content": content}}],
           "usage": {"prompt_tokens": 1000, "completion_tokens": 500}})
    .to_string()
}

#[test]
fn remote_backend_round_trip_with_retry() {
    let (url, server) = mock_server(vec![(503, "busy".into()), (200, completion("hello"))]);
    std::env::set_var("TASKFORGE_TEST_KEY", "sk-test");
    let cfg = RemoteConfig {
        endpoint: url,
        model: "m1".into(),
        api_key_env: "TASKFORGE_TEST_KEY".into(),
        prompt_price_per_1k: 0.002,
        completion_price_per_1k: 0.004,
        seed: Some(9),
        ..RemoteConfig::default()
    };
    let mut b = RemoteBackend::new(cfg).unwrap().with_backoff(Duration::from_millis(10));
    let msgs = [taskforge::agent::ChatMessage::user("hi")];
    let reply = b.complete(&ChatRequest { episode: "x", turn: 0, messages: &msgs }).unwrap();
    assert_eq!(reply.content, "hello");
    assert!((reply.usage.cost - 0.004).abs() < 1e-12);
    let bodies = server.join().unwrap();
    assert_eq!(bodies.len(), 2);
    assert!(bodies[1].contains("Bearer sk-test"));
    let body: serde_json::Value = serde_json::from_str(bodies[1].lines().nth(1).unwrap()).unwrap();
    assert_eq!(body["model"], "m1");
    assert_eq!(body["seed"], 9);
    assert_eq!(body["messages"][0]["content"], "hi");
}

#[test]
fn remote_backend_client_errors_are_not_retried() {
    let (url, server) = mock_server(vec![(400, "{\"error\": \"bad\"}".into())]);
    let cfg = RemoteConfig { endpoint: url, ..RemoteConfig::default() };
    let mut b = RemoteBackend::new(cfg).unwrap().with_backoff(Duration::from_millis(10));
    let err = b.complete(&ChatRequest { episode: "x", turn: 0, messages: &[] }).unwrap_err();
    assert!(!err.retryable);
    assert!(err.message.contains("400"));
    assert_eq!(server.join().unwrap().len(), 1);
}

#[test]
fn unreachable_endpoint_is_a_retryable_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let cfg = RemoteConfig { endpoint: format!("http://127.0.0.1:{port}"), max_retries: 1, ..RemoteConfig::default() };
    let mut b = RemoteBackend::new(cfg).unwrap().with_backoff(Duration::from_millis(1));
    let err = b.complete(&ChatRequest { episode: "x", turn: 0, messages: &[] }).unwrap_err();
    assert!(err.retryable);
}
