//! Config-driven experiments over the `icl-core` simulators.
//!
//! A TOML file names a backend, its parameter block and a seed list.
//! [`run_batch`] runs every seed, writes one per-round CSV per seed plus a
//! JSON summary, and [`compare_runs`] pairs two summaries seed by seed.

pub mod batch;
pub mod config;
pub mod oracle;

pub use batch::{compare_runs, run_batch, BatchOptions, Comparison, HarnessError, RunSummary, SeedSummary};
pub use config::{load_config, parse_config, Backend, ConfigError, Emit, ExperimentConfig};
pub use oracle::{run_oracle, CheckOutcome, OracleCheck, OracleConfig};
