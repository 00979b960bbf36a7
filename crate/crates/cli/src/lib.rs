//! Experiment harness: equivalence sweeps, the engineered-demonstration
//! experiment, invariant suites, optimizer runs, generation and plotting.

pub mod app;
pub mod config;
pub mod equiv;
pub mod error;
pub mod fig7;
pub mod generate;
pub mod optimize;
pub mod output;
pub mod plot;

use dualgrad_core::par::Execution;

pub use app::{run, Cli};
pub use error::{CliError, CliResult};

pub(crate) fn execution(cfg: &config::ExperimentConfig) -> Execution {
    if cfg.parallel {
        Execution::Parallel
    } else {
        Execution::Sequential
    }
}
