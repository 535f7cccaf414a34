//! Harness around the `veram` library: dataset generation, confidence
//! preprocessing, training, evaluation, ablation sweeps and the oracle.

pub mod commands;
pub mod error;
pub mod report;
pub mod settings;

pub use commands::*;
pub use error::{CliError, CliResult};
pub use report::{Checkpoint, EpochRecord, RunManifest};
pub use settings::{ScheduleKind, Settings};
