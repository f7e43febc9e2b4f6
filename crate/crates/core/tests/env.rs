mod support;

use std::time::{Duration, Instant};

use serde_json::json;
use support::{load_task, COPY_SAMPLE, THRESHOLD_MODEL};
use taskforge::agent::{Scenario, ScriptedBackend};
use taskforge::env::{
    run_evaluation, run_validation_agent, serve, EnvError, EnvSession, FeedbackKind, Response,
};
use taskforge::sandbox::SandboxLimits;
use taskforge::schema::{DefectCode, RouteTo};

fn code(src: &str) -> serde_json::Value {
    json!({"action": "tool", "tool": "execute_code", "arguments": {"code": src}})
}

fn info(key: &str) -> serde_json::Value {
    json!({"action": "tool", "tool": "request_info", "arguments": {"key": key}})
}

fn done() -> serde_json::Value {
    json!({"action": "final", "payload": {"summary": "done"}})
}

fn scripted(episodes: serde_json::Value) -> ScriptedBackend {
    ScriptedBackend::new(serde_json::from_value::<Scenario>(json!({"model_id": "toy-agent", "episodes": episodes})).unwrap())
}

#[test]
fn open_and_info() {
    let (_d, pkg, sb) = load_task("golden");
    let mut s = EnvSession::open(pkg, 10, &sb).unwrap();
    assert_eq!(s.step_count, 0);
    let f = s.request_info("overview");
    assert_eq!(f.kind, FeedbackKind::Info);
    assert!(f.payload.starts_with("Predict the binary label"));
    assert!(f.payload.contains("submission.csv"));
    let f = s.request_info("sample_submission");
    assert!(f.payload.starts_with("id,label\n0,1\n"));
    assert!(f.payload.contains("(20 lines in total)") || f.payload.contains("(21 lines in total)"));
    let f = s.request_info("data_structure");
    assert!(f.payload.contains("public/train.csv"), "{}", f.payload);
    assert!(f.payload.contains("columns: id,x1,x2,label"));
    let f = s.request_info("labels");
    assert_eq!(f.kind, FeedbackKind::ValidationError);
    assert!(f.payload.contains("unknown key"));
    assert_eq!(s.step_count, 0);
    assert!(s.history.iter().all(|f| !f.counted));
}

#[test]
fn unprepared_package_is_rejected() {
    let (_d, pkg, sb) = load_task("golden");
    std::fs::remove_dir_all(&pkg.tree.public_dir).unwrap();
    assert!(matches!(EnvSession::open(pkg, 10, &sb), Err(EnvError::Precondition(_))));
}

#[test]
fn code_steps_and_feedback_kinds() {
    let (_d, pkg, sb) = load_task("golden");
    let mut s = EnvSession::open(pkg, 10, &sb).unwrap();
    let f = s.execute_code(COPY_SAMPLE);
    assert_eq!(f.kind, FeedbackKind::Score, "{}", f.payload);
    assert_eq!(f.raw_score, Some(0.3));
    assert_eq!(f.step_index, 1);

    let f = s.execute_code("raise ValueError('boom')");
    assert_eq!(f.kind, FeedbackKind::RuntimeError);
    assert!(f.payload.contains("ValueError: boom"));

    let f = s.execute_code("open('submission.csv', 'w').write('row,guess\\n0,1\\n')");
    assert_eq!(f.kind, FeedbackKind::ValidationError);
    assert_eq!(f.payload, "missing column: id");

    let f = s.execute_code("print('hello')");
    assert_eq!(f.kind, FeedbackKind::Info);
    assert!(f.counted);

    let f = s.execute_code(THRESHOLD_MODEL);
    assert_eq!(f.raw_score, Some(1.0), "{}", f.payload);
    assert_eq!(s.step_count, 5);
    assert_eq!(s.best_raw_score, Some(1.0));
    assert_eq!(s.trajectory(), vec![Some(0.3), None, None, None, Some(1.0)]);
}

#[test]
fn best_score_respects_direction() {
    let (_d, pkg, sb) = load_task("regression");
    let mut s = EnvSession::open(pkg, 5, &sb).unwrap();
    let sample = s.execute_code(COPY_SAMPLE).raw_score.unwrap();
    let perfect = "import csv\nrows = list(csv.DictReader(open('public/test.csv')))\n\
                   open('submission.csv','w').write('id,y\\n' + ''.join('%s,%s\\n' % (r['id'], 2*float(r['x'])+1) for r in rows))\n";
    let fit = s.execute_code(perfect);
    let fit = fit.raw_score.unwrap_or_else(|| panic!("{}", fit.payload));
    assert!(fit < sample);
    s.execute_code(COPY_SAMPLE);
    assert_eq!(s.best_raw_score, Some(fit));
}

#[test]
fn isolation_probe_and_budget_accounting() {
    let (_d, pkg, sb) = load_task("golden");
    let answer = pkg.tree.test_answer.display().to_string();
    let root = pkg.root.display().to_string();
    let mut s = EnvSession::open(pkg, 10, &sb).unwrap();
    let probes = [
        format!("print(open({answer:?}).read())"),
        format!("import os\nprint(os.listdir({root:?}))"),
        format!("import os\nos.symlink({answer:?}, 'a.csv')\nprint(open('a.csv').read())"),
        format!("import subprocess\nsubprocess.run(['cat', {answer:?}])"),
    ];
    for (i, p) in probes.iter().enumerate() {
        s.request_info("overview");
        let f = s.execute_code(p);
        assert_eq!(f.kind, FeedbackKind::RuntimeError, "{}", f.payload);
        assert!(f.payload.contains("PermissionError"), "{}", f.payload);
        assert!(!f.payload.contains("0,1\n2,1"));
        assert_eq!(s.step_count, i + 1);
    }
    for _ in 0..6 {
        s.request_info("sample_submission");
        s.execute_code("pass");
    }
    assert_eq!(s.step_count, 10);
    assert!(s.exhausted());
    let f = s.execute_code(COPY_SAMPLE);
    assert_eq!(f.kind, FeedbackKind::ValidationError);
    assert!(f.payload.contains("budget exhausted"));
    assert!(!f.counted);
    assert_eq!(s.step_count, 10);
    assert_eq!(s.history.iter().filter(|f| f.counted).count(), 10);
    assert_eq!(s.trajectory().len(), 10);
    assert_eq!(s.history.iter().filter(|f| f.kind == FeedbackKind::RuntimeError).count(), 4);
}

#[test]
fn timeout_is_enforced() {
    let (d, pkg, _) = load_task("golden");
    let limits = SandboxLimits::default().with_working_dir(d.path().join("w")).with_timeout(Duration::from_secs(1));
    let sb = taskforge::sandbox::Sandbox::new(limits).unwrap();
    let mut s = EnvSession::open(pkg, 3, &sb).unwrap();
    let t = Instant::now();
    let f = s.execute_code("import time\ntime.sleep(30)");
    assert!(t.elapsed() < Duration::from_secs(2));
    assert_eq!(f.kind, FeedbackKind::RuntimeError);
    assert!(f.payload.starts_with("timeout"));
    assert_eq!(s.step_count, 1);
}

#[test]
fn concurrent_sessions_share_a_package() {
    let (_d, pkg, sb) = load_task("golden");
    let handles: Vec<_> = (0..3)
        .map(|_| {
            let (pkg, sb) = (pkg.clone(), sb.clone());
            std::thread::spawn(move || {
                let mut s = EnvSession::open(pkg, 2, &sb).unwrap();
                (s.execute_code(COPY_SAMPLE).raw_score, s.execute_code(THRESHOLD_MODEL).raw_score)
            })
        })
        .collect();
    for h in handles {
        assert_eq!(h.join().unwrap(), (Some(0.3), Some(1.0)));
    }
}

#[test]
fn validation_agent_passes_golden() {
    let (_d, pkg, sb) = load_task("golden");
    let mut b = scripted(json!({"validator": [[info("overview"), info("data_structure"), code(THRESHOLD_MODEL), done()]]}));
    let out = run_validation_agent(&pkg, &mut b, &sb, 10, "validator").unwrap();
    assert!(out.passed(), "{out:?}");
    assert_eq!(out.baseline_score, Some(0.3));
    assert_eq!(out.achieved_score, Some(1.0));
    assert!(out.defects.is_empty());
    assert_eq!(out.transcript.counted_steps(), 2);
}

#[test]
fn insensitive_metric_fails_performance() {
    let (_d, pkg, sb) = load_task("insensitive");
    let mut b = scripted(json!({"validator": [[code(THRESHOLD_MODEL), done()]]}));
    let out = run_validation_agent(&pkg, &mut b, &sb, 10, "validator").unwrap();
    assert!(out.pipeline_ok);
    assert!(!out.performance_ok);
    assert_eq!(out.defects.len(), 1);
    assert_eq!(out.defects[0].code, DefectCode::ContractMetric);
    assert_eq!(out.defects[0].route_to, RouteTo::Designer);
}

#[test]
fn runtime_errors_only_fail_the_pipeline() {
    let (_d, pkg, sb) = load_task("golden");
    let mut b = scripted(json!({"validator": [vec![code("import pandas_missing_module"); 4]]}));
    let out = run_validation_agent(&pkg, &mut b, &sb, 3, "validator").unwrap();
    assert!(!out.pipeline_ok);
    assert_eq!(out.transcript.counted_steps(), 3);
    assert_eq!(out.defects[0].code, DefectCode::ContractArtifacts);
    assert_eq!(out.defects[0].route_to, RouteTo::Refactor);
    assert!(out.defects[0].detail.contains("ModuleNotFoundError"));
}

#[test]
fn evaluation_trajectory_excludes_info_steps() {
    let (_d, pkg, sb) = load_task("golden");
    let turns = json!([info("overview"), info("data_structure"), code(COPY_SAMPLE), info("sample_submission"), code(THRESHOLD_MODEL), done()]);
    let mut b = scripted(json!({"evaluator": [turns]}));
    let run = run_evaluation(&pkg, &mut b, &sb, 15, 1).unwrap();
    assert_eq!(run.scores, vec![Some(0.3), Some(1.0)]);
    assert_eq!(run.best, Some(1.0));
    assert_eq!(run.model_id, "toy-agent");
    let t = run.trajectory(10);
    assert_eq!(t.raw.len(), 10);
    assert_eq!(t.raw[1], Some(1.0));
}

#[test]
fn stdio_protocol() {
    let (_d, pkg, sb) = load_task("golden");
    let mut s = EnvSession::open(pkg, 1, &sb).unwrap();
    let requests = [
        json!({"verb": "request_info", "key": "overview"}).to_string(),
        String::new(),
        "not json".to_string(),
        json!({"verb": "execute_code", "code": COPY_SAMPLE}).to_string(),
    ]
    .join("\n");
    let mut out = Vec::new();
    serve(&mut s, requests.as_bytes(), &mut out).unwrap();
    let lines: Vec<Response> =
        String::from_utf8(out).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0].feedback.as_ref().unwrap().kind, FeedbackKind::Info);
    assert!(lines[1].error.as_ref().unwrap().starts_with("malformed request"));
    let last = &lines[2];
    assert_eq!(last.feedback.as_ref().unwrap().raw_score, Some(0.3));
    assert!(last.done);
    let v: serde_json::Value = serde_json::to_value(last).unwrap();
    assert_eq!(v["feedback"]["kind"], "score");
}
