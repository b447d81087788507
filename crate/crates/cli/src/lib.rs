//! Benchmark orchestration for odedbn: run configs, pipelines and plots.

pub mod config;
pub mod pipeline;
pub mod plot;

pub use config::{EvidenceSource, RunConfig, TruthSource};
pub use pipeline::{cmd_filter, cmd_simulate, cmd_validate, Experiment, FilterOutcome};
pub use plot::cmd_plot;

use odedbn_core::{Error, ErrorKind};

/// Process exit code for a failed command.
pub fn exit_code(err: &Error) -> i32 {
    match err.kind() {
        ErrorKind::Validation => 2,
        ErrorKind::Numeric => 3,
        ErrorKind::Io => 4,
    }
}
