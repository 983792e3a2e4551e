//! Batch runner behind the `portcon` binary.
//!
//! * [`config`]: the TOML run configuration and its flag overrides.
//! * [`run`]: the full pipeline for every (pool, factor, scheme).
//! * [`compare`]: risk-normalized comparison of finished results.
//! * [`tools`]: synthetic data export and standalone kink analysis.
//! * [`report`]: report files and the overwrite-protected output directory.
//!
//! Errors carry the exit code of the binary: 1 for configuration, 2 for
//! data and 3 for computation failures.

pub mod compare;
pub mod config;
pub mod error;
pub mod report;
pub mod run;
pub mod tools;

pub use error::CliError;
