//! Scenario runs, parameter sweeps and reports for `pfsim`.
//!
//! The binary is a thin wrapper around [`simulate::simulate`],
//! [`sweep::sweep`] and [`report::report`]. Nothing here opens a network
//! socket: every input is a local file or a built-in preset.

pub mod artifacts;
pub mod error;
pub mod report;
pub mod simulate;
pub mod svg;
pub mod sweep;

pub use error::{CliError, Result};

/// Environment variable holding the log filter, e.g. `PFSIM_LOG=debug`.
pub const LOG_ENV: &str = "PFSIM_LOG";
