//! Run configuration: one TOML document, overridden by command-line flags.
//!
//! ```toml
//! workspace = "runs/demo"
//! seed = 7
//!
//! [backend]
//! kind = "scripted"
//! scenario = "scenarios/toy.json"
//!
//! [pipeline]
//! max_candidates = 2
//!
//! [sandbox]
//! wall_timeout_secs = 120
//! ```
//!
//! Relative paths are resolved against the directory of the config file.
//! Credentials never appear here; the remote backend names the environment
//! variable that holds its key (`api_key_env`).

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::agent::{Backend, BackendError, RemoteBackend, RemoteConfig, Scenario, ScriptedBackend};
use crate::pipeline::PipelineConfig;
use crate::sandbox::SandboxLimits;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BackendConfig {
    /// Replays a recorded scenario file.
    Scripted { scenario: PathBuf },
    Remote(RemoteConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SandboxConfig {
    pub wall_timeout_secs: f64,
    pub cpu_limit_secs: Option<f64>,
    pub memory_cap_mb: Option<u64>,
    pub network_disabled: bool,
    /// Defaults to `<workspace>/sandbox`.
    pub working_dir: Option<PathBuf>,
    pub output_cap: usize,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        let d = SandboxLimits::default();
        Self {
            wall_timeout_secs: d.wall_timeout.as_secs_f64(),
            cpu_limit_secs: d.cpu_limit.map(|c| c.as_secs_f64()),
            memory_cap_mb: d.memory_cap.map(|b| b >> 20),
            network_disabled: d.network_disabled,
            working_dir: None,
            output_cap: d.output_cap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Independent runs per (task, model); the best one is marked.
    pub runs: usize,
    /// Code-execution steps per run.
    pub step_budget: usize,
    /// Value of the `task_set` column of the score table.
    pub task_set: String,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { runs: 2, step_budget: 10, task_set: String::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Run directory holding the manifest, summary and generated tasks.
    pub workspace: PathBuf,
    pub seed: u64,
    /// Freezes timestamps, timings and costs and redacts run-specific paths.
    pub test_mode: bool,
    pub backend: Option<BackendConfig>,
    pub pipeline: PipelineConfig,
    pub sandbox: SandboxConfig,
    pub evaluation: EvaluationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            workspace: PathBuf::from("taskforge-run"),
            seed: 0,
            test_mode: false,
            backend: None,
            pipeline: PipelineConfig::default(),
            sandbox: SandboxConfig::default(),
            evaluation: EvaluationConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse { path: path.to_path_buf(), message: e.to_string() })?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let path = &std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf());
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Self::parse(&text, path)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.workspace);
        if let Some(BackendConfig::Scripted { scenario }) = &mut self.backend {
            fix(scenario);
        }
        if let Some(dir) = &mut self.sandbox.working_dir {
            fix(dir);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let p = &self.pipeline;
        if p.max_candidates == 0 || p.designer_retries == 0 || p.refactor_retries == 0 {
            return Err(ConfigError::Invalid("max_candidates and retry limits must be at least 1".into()));
        }
        if self.sandbox.wall_timeout_secs.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(ConfigError::Invalid("sandbox.wall_timeout_secs must be positive".into()));
        }
        if self.evaluation.runs == 0 || self.evaluation.step_budget == 0 {
            return Err(ConfigError::Invalid("evaluation.runs and evaluation.step_budget must be at least 1".into()));
        }
        Ok(())
    }

    /// Pipeline settings with the run seed applied.
    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig { seed: self.seed, ..self.pipeline.clone() }
    }

    pub fn sandbox_limits(&self) -> SandboxLimits {
        let s = &self.sandbox;
        SandboxLimits {
            wall_timeout: Duration::from_secs_f64(s.wall_timeout_secs),
            cpu_limit: s.cpu_limit_secs.map(Duration::from_secs_f64),
            memory_cap: s.memory_cap_mb.map(|mb| mb << 20),
            network_disabled: s.network_disabled,
            working_dir: s.working_dir.clone().unwrap_or_else(|| self.workspace.join("sandbox")),
            output_cap: s.output_cap,
        }
    }

    /// Builds the configured backend, seeded with the run seed.
    pub fn backend(&self) -> Result<Box<dyn Backend>, BackendError> {
        match &self.backend {
            None => Err(BackendError::fatal("no backend configured (set [backend] or pass --scenario)")),
            Some(BackendConfig::Scripted { scenario }) => {
                Ok(Box::new(ScriptedBackend::new(Scenario::load(scenario)?).with_seed(self.seed)))
            }
            Some(BackendConfig::Remote(remote)) => {
                let mut remote = remote.clone();
                remote.seed.get_or_insert(self.seed);
                Ok(Box::new(RemoteBackend::new(remote)?))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_relative_paths() {
        let text = r#"
            workspace = "out"
            seed = 7
            [backend]
            kind = "scripted"
            scenario = "s.json"
            [pipeline]
            max_candidates = 2
            review_mode = "best-effort"
            [sandbox]
            wall_timeout_secs = 30
        "#;
        let cfg = RunConfig::parse(text, Path::new("/etc/tf/run.toml")).unwrap();
        assert_eq!(cfg.workspace, PathBuf::from("/etc/tf/out"));
        assert_eq!(cfg.backend, Some(BackendConfig::Scripted { scenario: "/etc/tf/s.json".into() }));
        assert_eq!(cfg.pipeline.max_candidates, 2);
        assert_eq!(cfg.pipeline.designer_retries, 3);
        assert_eq!(cfg.pipeline_config().seed, 7);
        let limits = cfg.sandbox_limits();
        assert_eq!(limits.wall_timeout, Duration::from_secs(30));
        assert_eq!(limits.working_dir, PathBuf::from("/etc/tf/out/sandbox"));
        assert_eq!(limits.memory_cap, Some(4 << 30));
        cfg.validate().unwrap();
    }

    #[test]
    fn remote_backend_names_its_key_variable() {
        let text = r#"
            [backend]
            kind = "remote"
            endpoint = "https://example.invalid/v1"
            model = "m"
            api_key_env = "MY_KEY"
        "#;
        let cfg = RunConfig::parse(text, Path::new("run.toml")).unwrap();
        let Some(BackendConfig::Remote(r)) = &cfg.backend else { panic!() };
        assert_eq!(r.api_key_env, "MY_KEY");
    }

    #[test]
    fn unknown_keys_are_errors() {
        let e = RunConfig::parse("sead = 1", Path::new("x.toml")).unwrap_err();
        assert!(e.to_string().contains("sead"), "{e}");
        let e = RunConfig::parse("[pipeline]\nmax_candidate = 1", Path::new("x.toml")).unwrap_err();
        assert!(matches!(e, ConfigError::Parse { .. }));
        let cfg = RunConfig::parse("[pipeline]\nmax_candidates = 0", Path::new("x.toml")).unwrap();
        assert!(cfg.validate().is_err());
    }
}
