//! Batch runner: scenario parsing, task orchestration and report files.

pub mod run;
pub mod scenario;

pub use run::{emit_phase_table, run_scenario, Agreement, Summary, SummaryRow};
pub use scenario::{parse_mesh, parse_scenario, Family, Scenario, Task};

use pwlab_core::PwError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("missing required key {0:?}")]
    Missing(&'static str),

    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] PwError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
