//! Staged command-line pipeline over the `spinekin` library: synthesis,
//! triangulation, inverse and forward kinematics, analysis and evaluation.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod plot;

pub use cli::{run, Cli};
pub use config::PipelineConfig;
pub use error::CliError;
