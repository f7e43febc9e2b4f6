//! Generate, verify and execute competition-style ML engineering tasks.
//!
//! - [`schema`]: the unified package layout, metadata, defect codes and the
//!   assertion layer.
//! - [`sandbox`]: subprocess runner with timeouts, memory cap and network
//!   isolation.
//! - [`agent`]: budgeted tool-calling loop, backends and structured output.
//! - [`env`]: the interactive `request_info` / `execute_code` environment and
//!   execution-based validation.
//! - [`pipeline`]: brainstorm, design, refactor, review and validate with
//!   retries and defect routing.
//! - [`manifest`], [`config`], [`tables`], [`cli`]: run bookkeeping and the
//!   command-line surface.
//!
//! Score analytics live in [`analytics`].

pub mod agent;
pub mod cli;
pub mod config;
pub mod env;
pub mod manifest;
pub mod pipeline;
pub mod schema;
pub mod sandbox;
pub mod tables;
pub mod util;

pub use taskforge_analytics as analytics;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/task-format.md")]
    mod task_format {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/environment.md")]
    mod environment {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
