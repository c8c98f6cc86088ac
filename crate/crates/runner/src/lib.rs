//! Configuration-driven sweeps over the dephasing engine: parse a config or
//! pick a preset, run it, and collect CSV/JSON products under a manifest.

pub mod config;
pub mod oracle;
pub mod preset;
pub mod run;

pub use config::{ConfigError, ExperimentConfig};
pub use run::{run, Manifest, RunOptions, RunnerError};

/// Process exit codes of the command-line tool.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG_ERROR: i32 = 1;
    pub const PARTIAL_FAILURE: i32 = 2;
    pub const ORACLE_MISMATCH: i32 = 3;
}
