mod support;

use std::fs;
use std::time::{Duration, Instant};

use support::sandbox_in;
use taskforge::sandbox::{ExecSpec, ExitState, Policy, Sandbox, SandboxLimits};

fn script(dir: &std::path::Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("probe.py");
    fs::write(&path, body).unwrap();
    path
}

#[test]
fn sleep_past_timeout_is_killed_within_twice_the_limit() {
    let dir = tempfile::tempdir().unwrap();
    let sb = sandbox_in(dir.path());
    let limit = Duration::from_millis(500);
    let start = Instant::now();
    let out = sb
        .run(&ExecSpec::python(script(dir.path(), "import time\ntime.sleep(30)\n"), dir.path()).timeout(limit))
        .unwrap();
    assert_eq!(out.status, ExitState::TimedOut);
    assert!(start.elapsed() < 2 * limit, "{:?}", start.elapsed());
}

#[test]
fn timeout_kills_grandchildren_holding_pipes() {
    let dir = tempfile::tempdir().unwrap();
    let sb = sandbox_in(dir.path());
    let start = Instant::now();
    let out = sb
        .run(&ExecSpec::shell("sleep 30 & sleep 30", dir.path()).timeout(Duration::from_millis(300)))
        .unwrap();
    assert_eq!(out.status, ExitState::TimedOut);
    assert!(start.elapsed() < Duration::from_secs(5));
}

#[test]
fn environment_is_scrubbed_and_seeded() {
    let dir = tempfile::tempdir().unwrap();
    std::env::set_var("TASKFORGE_TEST_SECRET", "hunter2");
    let sb = sandbox_in(dir.path()).with_seed(42);
    let out = sb
        .run(&ExecSpec::python(
            script(dir.path(), "import os\nprint(os.environ.get('TASKFORGE_TEST_SECRET'), os.environ['TASKFORGE_SEED'])\n"),
            dir.path(),
        ))
        .unwrap();
    assert!(out.success(), "{}", out.stderr);
    assert_eq!(out.stdout.trim(), "None 42");
}

#[test]
fn network_is_unavailable() {
    let dir = tempfile::tempdir().unwrap();
    let sb = sandbox_in(dir.path());
    let body = "import socket\ntry:\n    socket.create_connection(('1.1.1.1', 80), timeout=2)\n    print('connected')\nexcept Exception as e:\n    print('blocked', type(e).__name__)\n";
    let out = sb.run(&ExecSpec::python(script(dir.path(), body), dir.path())).unwrap();
    assert!(out.stdout.starts_with("blocked"), "{out:?}");

    // The namespace alone also blocks non-Python programs.
    if sb.network_isolated() {
        let out = sb.run(&ExecSpec::shell("cat /proc/net/dev | wc -l", dir.path())).unwrap();
        // Header lines plus loopback only.
        assert_eq!(out.stdout.trim(), "3", "{out:?}");
    }
}

#[test]
fn audit_hook_denies_reads_and_spawns() {
    let dir = tempfile::tempdir().unwrap();
    let secret = dir.path().join("secret");
    fs::create_dir_all(&secret).unwrap();
    fs::write(secret.join("answer.csv"), "id,label\n1,1\n").unwrap();
    let sb = sandbox_in(dir.path());
    let policy = Policy { deny_read: vec![secret.clone()], deny_spawn: true };

    let body = format!("print(open({:?}).read())\n", secret.join("answer.csv"));
    let out = sb.run(&ExecSpec::python(script(dir.path(), &body), dir.path()).policy(policy.clone())).unwrap();
    assert_eq!(out.status, ExitState::Exited(1));
    assert!(out.stderr.contains("PermissionError"), "{}", out.stderr);

    // Relative paths and symlinks resolve to the same place.
    std::os::unix::fs::symlink(&secret, dir.path().join("link")).unwrap();
    let out = sb
        .run(&ExecSpec::python(script(dir.path(), "import os\nprint(os.listdir('link'))\n"), dir.path()).policy(policy.clone()))
        .unwrap();
    assert!(out.stderr.contains("PermissionError"), "{}", out.stderr);

    let out = sb
        .run(&ExecSpec::python(script(dir.path(), "import subprocess\nsubprocess.run(['true'])\n"), dir.path()).policy(policy))
        .unwrap();
    assert!(out.stderr.contains("process spawning is disabled"), "{}", out.stderr);
}

#[test]
fn memory_cap_applies() {
    let dir = tempfile::tempdir().unwrap();
    let limits = SandboxLimits { memory_cap: Some(256 << 20), ..SandboxLimits::default().with_working_dir(dir.path()) };
    let sb = Sandbox::new(limits).unwrap();
    let out = sb
        .run(&ExecSpec::python(script(dir.path(), "x = bytearray(1 << 30)\nprint('allocated')\n"), dir.path()))
        .unwrap();
    assert!(!out.success());
    assert!(out.stderr.contains("MemoryError"), "{}", out.stderr);
}

#[test]
fn output_is_capped() {
    let dir = tempfile::tempdir().unwrap();
    let limits = SandboxLimits { output_cap: 1000, ..SandboxLimits::default().with_working_dir(dir.path()) };
    let sb = Sandbox::new(limits).unwrap();
    let out = sb.run(&ExecSpec::python(script(dir.path(), "print('x' * 100000)\n"), dir.path())).unwrap();
    assert!(out.success());
    assert!(out.truncated);
    assert_eq!(out.stdout.len(), 1000);
}
