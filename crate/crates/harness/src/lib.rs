//! Experiment harness for the policies in `bandit-core`: TOML run configs,
//! replicated simulations over hyperparameter grids, per-step regret traces,
//! sign-test comparisons and SVG charts.

pub mod charts;
pub mod config;
pub mod error;
pub mod metrics;
pub mod precheck;
pub mod runner;
pub mod summary;
pub mod target;
pub mod trace;

pub use config::RunConfig;
pub use error::{HarnessError, Result};
pub use runner::{run_experiment, RunOptions, RunOutput};
pub use summary::Summary;
