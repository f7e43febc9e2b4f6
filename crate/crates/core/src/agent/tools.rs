//! File, shell and code tools confined to one workspace directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Component, Path, PathBuf};
use std::time::Duration;

use super::{ToolResult, Toolbox};
use crate::sandbox::{ExecSpec, Sandbox};

pub const READ_FILE: &str = "read_file";
pub const WRITE_FILE: &str = "write_file";
pub const SHELL: &str = "shell";
pub const RUN_CODE: &str = "run_code";

const READ_CAP: usize = 256 << 10;

pub struct WorkspaceTools {
    root: PathBuf,
    /// Additional directories that may be read but not written.
    read_roots: Vec<PathBuf>,
    sandbox: Sandbox,
    read_only: bool,
    timeout: Option<Duration>,
    runs: usize,
}

impl WorkspaceTools {
    pub fn new(root: &Path, sandbox: Sandbox) -> std::io::Result<Self> {
        Ok(Self {
            root: fs::canonicalize(root)?,
            read_roots: Vec::new(),
            sandbox,
            read_only: false,
            timeout: None,
            runs: 0,
        })
    }

    /// Only `read_file` is allowed.
    pub fn read_only(mut self) -> Self {
        self.read_only = true;
        self
    }

    pub fn with_read_root(mut self, dir: &Path) -> std::io::Result<Self> {
        self.read_roots.push(fs::canonicalize(dir)?);
        Ok(self)
    }

    /// Per-call timeout for `shell` and `run_code`.
    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = Some(timeout);
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Resolves `raw` against the workspace, rejecting anything that ends up
    /// outside `roots` lexically or through symlinks.
    fn resolve(&self, raw: &str, writable: bool) -> Result<PathBuf, String> {
        let raw = raw.trim();
        if raw.is_empty() {
            return Err("empty path".into());
        }
        let joined = if Path::new(raw).is_absolute() { PathBuf::from(raw) } else { self.root.join(raw) };
        let mut norm = PathBuf::new();
        for c in joined.components() {
            match c {
                Component::ParentDir => {
                    norm.pop();
                }
                Component::CurDir => {}
                other => norm.push(other),
            }
        }
        let allowed: Vec<&PathBuf> = if writable {
            vec![&self.root]
        } else {
            std::iter::once(&self.root).chain(&self.read_roots).collect()
        };
        let inside = |p: &Path| allowed.iter().any(|r| p.starts_with(r));
        if !inside(&norm) {
            return Err(format!("{raw}: outside the workspace"));
        }
        // Follow symlinks on the longest existing prefix.
        let mut existing = norm.as_path();
        while !existing.exists() {
            existing = existing.parent().ok_or_else(|| format!("{raw}: invalid path"))?;
        }
        let real = fs::canonicalize(existing).map_err(|e| format!("{raw}: {e}"))?;
        if !inside(&real) {
            return Err(format!("{raw}: resolves outside the workspace"));
        }
        match norm.strip_prefix(existing) {
            Ok(rest) if !rest.as_os_str().is_empty() => Ok(real.join(rest)),
            _ => Ok(real),
        }
    }

    fn read_file(&self, args: &BTreeMap<String, String>) -> ToolResult {
        let Some(path) = args.get("path") else {
            return ToolResult::error("read_file requires `path`");
        };
        let path = match self.resolve(path, false) {
            Ok(p) => p,
            Err(e) => return ToolResult::refused(e),
        };
        if path.is_dir() {
            return match fs::read_dir(&path) {
                Ok(rd) => {
                    let mut names: Vec<String> = rd
                        .flatten()
                        .map(|e| {
                            let n = e.file_name().to_string_lossy().into_owned();
                            if e.path().is_dir() {
                                n + "/"
                            } else {
                                n
                            }
                        })
                        .collect();
                    names.sort();
                    ToolResult::ok(names.join("\n"))
                }
                Err(e) => ToolResult::error(format!("{}: {e}", path.display())),
            };
        }
        match fs::read(&path) {
            Ok(bytes) => {
                let text = String::from_utf8_lossy(&bytes[..bytes.len().min(READ_CAP)]).into_owned();
                ToolResult::ok(text)
            }
            Err(e) => ToolResult::error(format!("{}: {e}", path.display())),
        }
    }

    fn write_file(&self, args: &BTreeMap<String, String>) -> ToolResult {
        let (Some(path), Some(content)) = (args.get("path"), args.get("content")) else {
            return ToolResult::error("write_file requires `path` and `content`");
        };
        let target = match self.resolve(path, true) {
            Ok(p) => p,
            Err(e) => return ToolResult::refused(e),
        };
        if let Some(parent) = target.parent() {
            if let Err(e) = fs::create_dir_all(parent) {
                return ToolResult::error(format!("{path}: {e}"));
            }
        }
        match fs::write(&target, content) {
            Ok(()) => ToolResult::ok(format!("wrote {} bytes to {path}", content.len())),
            Err(e) => ToolResult::error(format!("{path}: {e}")),
        }
    }

    fn exec(&mut self, mut spec: ExecSpec) -> ToolResult {
        if let Some(t) = self.timeout {
            spec = spec.timeout(t);
        }
        match self.sandbox.run(&spec) {
            Ok(out) => ToolResult::ok(out.summary(usize::MAX)),
            Err(e) => ToolResult::error(e.to_string()),
        }
    }

    fn shell(&mut self, args: &BTreeMap<String, String>) -> ToolResult {
        let Some(cmd) = args.get("command") else {
            return ToolResult::error("shell requires `command`");
        };
        let spec = ExecSpec::shell(cmd.clone(), self.root.clone());
        self.exec(spec)
    }

    fn run_code(&mut self, args: &BTreeMap<String, String>) -> ToolResult {
        let Some(code) = args.get("code") else {
            return ToolResult::error("run_code requires `code`");
        };
        self.runs += 1;
        let dir = match self
            .sandbox
            .scratch_dir(&format!("code-{:016x}", crate::util::path_key(&self.root)))
        {
            Ok(d) => d,
            Err(e) => return ToolResult::error(e.to_string()),
        };
        let script = dir.join(format!("run_{}.py", self.runs));
        if let Err(e) = fs::write(&script, code) {
            return ToolResult::error(e.to_string());
        }
        let spec = ExecSpec::python(script, self.root.clone());
        self.exec(spec)
    }
}

impl Toolbox for WorkspaceTools {
    fn describe(&self) -> String {
        let mut out = String::from(
            "- read_file {\"path\"}: read a file (or list a directory) inside the workspace\n",
        );
        if !self.read_only {
            out.push_str(
                "- write_file {\"path\", \"content\"}: create or overwrite a file inside the workspace\n\
                 - shell {\"command\"}: run a /bin/sh command with the workspace as working directory\n\
                 - run_code {\"code\"}: run Python code with the workspace as working directory\n",
            );
        }
        out
    }

    fn call(&mut self, tool: &str, args: &BTreeMap<String, String>) -> ToolResult {
        match (tool, self.read_only) {
            (READ_FILE, _) => self.read_file(args),
            (WRITE_FILE | SHELL | RUN_CODE, true) => ToolResult::refused(format!("{tool} is not available to this role")),
            (WRITE_FILE, false) => self.write_file(args),
            (SHELL, false) => self.shell(args),
            (RUN_CODE, false) => self.run_code(args),
            _ => ToolResult::refused(format!("unknown tool {tool:?}")),
        }
    }
}
