//! File formats, checkpoints and the command workflows behind the `relex`
//! binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod model;

pub use config::{Overrides, RunConfig};
pub use error::{CliError, CliResult};
pub use model::{AnyModel, Checkpoint, Dataset, ModelKind};
