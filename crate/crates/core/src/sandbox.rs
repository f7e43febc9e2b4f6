//! Subprocess sandbox for package scripts and agent code.
//!
//! Every run gets a scrubbed environment, its own process group (killed as a
//! whole on timeout), an address-space cap, and, when networking is disabled,
//! a fresh network namespace. Python programs are started through a small
//! boot wrapper that installs an audit hook enforcing the per-run [`Policy`].

use std::ffi::OsString;
use std::fs;
use std::io::{self, Read};
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::util::fnv1a;

pub const BOOT_SCRIPT: &str = "taskforge_boot.py";
pub const GRADING_MODULE: &str = "taskforge_grading.py";

const BOOT_SOURCE: &str = include_str!("../assets/runtime/taskforge_boot.py");
const GRADING_SOURCE: &str = include_str!("../assets/runtime/taskforge_grading.py");

#[derive(Debug, thiserror::Error)]
pub enum SandboxError {
    #[error("failed to start {program}: {source}")]
    Spawn { program: String, source: io::Error },
    #[error("sandbox I/O error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandboxLimits {
    pub wall_timeout: Duration,
    pub cpu_limit: Option<Duration>,
    /// Address-space cap in bytes.
    pub memory_cap: Option<u64>,
    pub network_disabled: bool,
    /// Root for scratch directories and session workspaces.
    pub working_dir: PathBuf,
    /// Bytes kept from each of stdout and stderr.
    pub output_cap: usize,
}

impl Default for SandboxLimits {
    fn default() -> Self {
        Self {
            wall_timeout: Duration::from_secs(600),
            cpu_limit: None,
            memory_cap: Some(4 << 30),
            network_disabled: true,
            working_dir: std::env::temp_dir().join("taskforge"),
            output_cap: 1 << 20,
        }
    }
}

impl SandboxLimits {
    pub fn with_working_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.working_dir = dir.into();
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.wall_timeout = timeout;
        self
    }
}

/// Extra restrictions applied to Python programs through the audit hook.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Policy {
    /// Directories whose contents may not be opened or listed.
    pub deny_read: Vec<PathBuf>,
    pub deny_spawn: bool,
}

#[derive(Debug, Clone)]
pub enum Program {
    /// A Python script run through the boot wrapper.
    Python { script: PathBuf, args: Vec<OsString> },
    /// A `/bin/sh -c` command line. The audit-hook policy does not apply.
    Shell(String),
}

#[derive(Debug, Clone)]
pub struct ExecSpec {
    pub program: Program,
    pub cwd: PathBuf,
    pub policy: Policy,
    /// Overrides the sandbox wall timeout for this run.
    pub timeout: Option<Duration>,
    pub env: Vec<(String, String)>,
}

impl ExecSpec {
    pub fn python(script: impl Into<PathBuf>, cwd: impl Into<PathBuf>) -> Self {
        Self {
            program: Program::Python { script: script.into(), args: Vec::new() },
            cwd: cwd.into(),
            policy: Policy::default(),
            timeout: None,
            env: Vec::new(),
        }
    }

    pub fn shell(command: impl Into<String>, cwd: impl Into<PathBuf>) -> Self {
        Self {
            program: Program::Shell(command.into()),
            cwd: cwd.into(),
            policy: Policy::default(),
            timeout: None,
            env: Vec::new(),
        }
    }

    pub fn arg(mut self, arg: impl Into<OsString>) -> Self {
        if let Program::Python { args, .. } = &mut self.program {
            args.push(arg.into());
        }
        self
    }

    pub fn policy(mut self, policy: Policy) -> Self {
        self.policy = policy;
        self
    }

    pub fn timeout(mut self, timeout: Duration) -> Self {
        self.timeout = Some(timeout);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExitState {
    Exited(i32),
    Signaled(i32),
    TimedOut,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecOutput {
    pub status: ExitState,
    pub stdout: String,
    pub stderr: String,
    pub truncated: bool,
    pub wall_time: Duration,
}

impl ExecOutput {
    pub fn success(&self) -> bool {
        self.status == ExitState::Exited(0)
    }

    pub fn timed_out(&self) -> bool {
        self.status == ExitState::TimedOut
    }

    /// One-line status plus the stream tails, for defect details.
    pub fn summary(&self, cap: usize) -> String {
        let status = match self.status {
            ExitState::Exited(c) => format!("exit status {c}"),
            ExitState::Signaled(s) => format!("killed by signal {s}"),
            ExitState::TimedOut => "timeout".to_string(),
        };
        let mut out = status;
        for (name, text) in [("stdout", &self.stdout), ("stderr", &self.stderr)] {
            let t = text.trim();
            if !t.is_empty() {
                out.push_str(&format!("\n{name}:\n{}", crate::util::tail_text(t, cap)));
            }
        }
        out
    }
}

#[derive(Debug)]
struct Inner {
    limits: SandboxLimits,
    runtime_dir: PathBuf,
    python: PathBuf,
    seed: u64,
    net_namespace: bool,
}

/// Cheap to clone; clones share the runtime directory.
#[derive(Debug, Clone)]
pub struct Sandbox {
    inner: Arc<Inner>,
}

impl Sandbox {
    /// Creates the working directory, installs the runtime assets and probes
    /// whether network namespaces are available.
    pub fn new(limits: SandboxLimits) -> Result<Self, SandboxError> {
        fs::create_dir_all(&limits.working_dir)?;
        let runtime_dir = install_runtime()?;
        let python = std::env::var_os("TASKFORGE_PYTHON")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("python3"));
        let net_namespace = limits.network_disabled && probe_net_namespace();
        if limits.network_disabled && !net_namespace {
            tracing::warn!("network namespaces unavailable; relying on the audit hook only");
        }
        Ok(Self {
            inner: Arc::new(Inner { limits, runtime_dir, python, seed: 0, net_namespace }),
        })
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        self.rebuild(|i| i.seed = seed)
    }

    pub fn with_limits(&self, limits: SandboxLimits) -> Self {
        self.rebuild(|i| {
            i.net_namespace = limits.network_disabled && (i.net_namespace || probe_net_namespace());
            i.limits = limits;
        })
    }

    fn rebuild(&self, f: impl FnOnce(&mut Inner)) -> Self {
        let mut inner = Inner {
            limits: self.inner.limits.clone(),
            runtime_dir: self.inner.runtime_dir.clone(),
            python: self.inner.python.clone(),
            seed: self.inner.seed,
            net_namespace: self.inner.net_namespace,
        };
        f(&mut inner);
        Self { inner: Arc::new(inner) }
    }

    pub fn limits(&self) -> &SandboxLimits {
        &self.inner.limits
    }

    pub fn seed(&self) -> u64 {
        self.inner.seed
    }

    pub fn runtime_dir(&self) -> &Path {
        &self.inner.runtime_dir
    }

    /// Whether runs get their own network namespace (as opposed to relying
    /// on the audit hook alone).
    pub fn network_isolated(&self) -> bool {
        self.inner.net_namespace
    }

    /// An empty directory `working_dir/scratch/<name>`.
    pub fn scratch_dir(&self, name: &str) -> io::Result<PathBuf> {
        let dir = self.inner.limits.working_dir.join("scratch").join(name);
        crate::util::fresh_dir(&dir)?;
        Ok(dir)
    }

    pub fn run(&self, spec: &ExecSpec) -> Result<ExecOutput, SandboxError> {
        let inner = &*self.inner;
        let limits = &inner.limits;
        let (mut cmd, program_name) = match &spec.program {
            Program::Python { script, args } => {
                let mut c = Command::new(&inner.python);
                // The child runs in `spec.cwd`, so a relative script path would not resolve.
                let script = std::path::absolute(script).unwrap_or_else(|_| script.clone());
                c.arg("-B").arg(inner.runtime_dir.join(BOOT_SCRIPT)).arg(&script).args(args);
                (c, script.display().to_string())
            }
            Program::Shell(line) => {
                let mut c = Command::new("/bin/sh");
                c.arg("-c").arg(line);
                (c, "/bin/sh".to_string())
            }
        };

        cmd.current_dir(&spec.cwd)
            .env_clear()
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .process_group(0);
        let path = std::env::var("PATH").unwrap_or_else(|_| "/usr/local/bin:/usr/bin:/bin".into());
        let deny = std::env::join_paths(&spec.policy.deny_read)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
        cmd.env("PATH", path)
            .env("HOME", &spec.cwd)
            .env("LANG", "C.UTF-8")
            .env("PYTHONPATH", &inner.runtime_dir)
            .env("PYTHONHASHSEED", "0")
            .env("PYTHONDONTWRITEBYTECODE", "1")
            .env("PYTHONUNBUFFERED", "1")
            .env("MPLBACKEND", "Agg")
            .env("OMP_NUM_THREADS", "1")
            .env("TASKFORGE_SEED", inner.seed.to_string())
            .env("TASKFORGE_DENY_READ", deny)
            .env("TASKFORGE_NO_NET", if limits.network_disabled { "1" } else { "0" })
            .env("TASKFORGE_NO_SPAWN", if spec.policy.deny_spawn { "1" } else { "0" });
        for (k, v) in &spec.env {
            cmd.env(k, v);
        }

        let memory_cap = limits.memory_cap;
        let cpu_secs = limits.cpu_limit.map(|d| d.as_secs().max(1));
        let unshare_net = inner.net_namespace;
        // SAFETY: the closure only issues async-signal-safe syscalls.
        unsafe {
            cmd.pre_exec(move || {
                if let Some(cap) = memory_cap {
                    set_rlimit(libc::RLIMIT_AS, cap)?;
                }
                if let Some(secs) = cpu_secs {
                    set_rlimit(libc::RLIMIT_CPU, secs)?;
                }
                if unshare_net && !isolate_network() {
                    return Err(io::Error::last_os_error());
                }
                Ok(())
            });
        }

        let start = Instant::now();
        let mut child = cmd
            .spawn()
            .map_err(|source| SandboxError::Spawn { program: program_name, source })?;
        let pgid = child.id() as libc::pid_t;
        let cap = limits.output_cap;
        let out_reader = spawn_reader(child.stdout.take(), cap);
        let err_reader = spawn_reader(child.stderr.take(), cap);

        let timeout = spec.timeout.unwrap_or(limits.wall_timeout);
        let mut timed_out = false;
        let status = loop {
            if let Some(status) = child.try_wait()? {
                break status;
            }
            if start.elapsed() >= timeout {
                kill_group(pgid);
                timed_out = true;
                break child.wait()?;
            }
            thread::sleep(Duration::from_millis(5));
        };
        // Reap anything the program left behind so the pipes close.
        kill_group(pgid);
        let wall_time = start.elapsed();

        let (stdout, t1) = out_reader.join().unwrap_or_default();
        let (stderr, t2) = err_reader.join().unwrap_or_default();
        let status = if timed_out {
            ExitState::TimedOut
        } else if let Some(code) = status.code() {
            ExitState::Exited(code)
        } else {
            use std::os::unix::process::ExitStatusExt;
            ExitState::Signaled(status.signal().unwrap_or(0))
        };
        Ok(ExecOutput { status, stdout, stderr, truncated: t1 || t2, wall_time })
    }
}

fn spawn_reader<R: Read + Send + 'static>(
    stream: Option<R>,
    cap: usize,
) -> thread::JoinHandle<(String, bool)> {
    thread::spawn(move || {
        let Some(mut stream) = stream else {
            return (String::new(), false);
        };
        let mut kept = Vec::new();
        let mut truncated = false;
        let mut buf = [0u8; 8192];
        loop {
            match stream.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    let room = cap.saturating_sub(kept.len());
                    if n > room {
                        truncated = true;
                    }
                    kept.extend_from_slice(&buf[..n.min(room)]);
                }
            }
        }
        (String::from_utf8_lossy(&kept).into_owned(), truncated)
    })
}

fn kill_group(pgid: libc::pid_t) {
    // SAFETY: plain syscall; ESRCH when the group is already gone is fine.
    unsafe {
        libc::killpg(pgid, libc::SIGKILL);
    }
}

fn set_rlimit(resource: libc::__rlimit_resource_t, value: u64) -> io::Result<()> {
    let lim = libc::rlimit { rlim_cur: value as libc::rlim_t, rlim_max: value as libc::rlim_t };
    // SAFETY: valid pointer to a stack value.
    if unsafe { libc::setrlimit(resource, &lim) } != 0 {
        return Err(io::Error::last_os_error());
    }
    Ok(())
}

/// Moves the calling process into a new network namespace. Falls back to a
/// user namespace (mapping the current ids onto themselves) when the caller
/// lacks CAP_SYS_ADMIN. Runs between fork and exec, so no allocation.
fn isolate_network() -> bool {
    // SAFETY: raw syscalls on static paths and stack buffers.
    unsafe {
        if libc::unshare(libc::CLONE_NEWNET) == 0 {
            return true;
        }
        let uid = libc::geteuid();
        let gid = libc::getegid();
        if libc::unshare(libc::CLONE_NEWUSER | libc::CLONE_NEWNET) != 0 {
            return false;
        }
        let mut buf = [0u8; 48];
        write_proc(c"/proc/self/setgroups", b"deny");
        let n = id_map(&mut buf, uid);
        if !write_proc(c"/proc/self/uid_map", &buf[..n]) {
            return false;
        }
        let n = id_map(&mut buf, gid);
        write_proc(c"/proc/self/gid_map", &buf[..n])
    }
}

unsafe fn write_proc(path: &std::ffi::CStr, data: &[u8]) -> bool {
    let fd = libc::open(path.as_ptr(), libc::O_WRONLY);
    if fd < 0 {
        return false;
    }
    let ok = libc::write(fd, data.as_ptr().cast(), data.len()) == data.len() as isize;
    libc::close(fd);
    ok
}

/// Formats "<id> <id> 1" into `buf` without allocating.
fn id_map(buf: &mut [u8; 48], id: u32) -> usize {
    let mut digits = [0u8; 10];
    let mut n = 0;
    let mut v = id;
    loop {
        digits[n] = b'0' + (v % 10) as u8;
        n += 1;
        v /= 10;
        if v == 0 {
            break;
        }
    }
    let mut len = 0;
    for _ in 0..2 {
        for k in (0..n).rev() {
            buf[len] = digits[k];
            len += 1;
        }
        buf[len] = b' ';
        len += 1;
    }
    buf[len] = b'1';
    len + 1
}

fn probe_net_namespace() -> bool {
    let mut cmd = Command::new("/bin/sh");
    cmd.arg("-c").arg("exit 0").stdin(Stdio::null()).stdout(Stdio::null()).stderr(Stdio::null());
    // SAFETY: see `isolate_network`.
    unsafe {
        cmd.pre_exec(|| {
            if isolate_network() {
                Ok(())
            } else {
                Err(io::Error::last_os_error())
            }
        });
    }
    matches!(cmd.status(), Ok(s) if s.success())
}

/// Writes the boot wrapper and grading base module into a content-addressed
/// directory under the system temp dir.
fn install_runtime() -> io::Result<PathBuf> {
    let mut key = BOOT_SOURCE.as_bytes().to_vec();
    key.extend_from_slice(GRADING_SOURCE.as_bytes());
    let dir = std::env::temp_dir().join(format!("taskforge-runtime-{:016x}", fnv1a(&key)));
    fs::create_dir_all(&dir)?;
    for (name, body) in [(BOOT_SCRIPT, BOOT_SOURCE), (GRADING_MODULE, GRADING_SOURCE)] {
        let path = dir.join(name);
        if fs::read(&path).ok().as_deref() == Some(body.as_bytes()) {
            continue;
        }
        let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
        io::Write::write_all(&mut tmp, body.as_bytes())?;
        tmp.persist(&path).map_err(|e| e.error)?;
    }
    Ok(dir)
}
