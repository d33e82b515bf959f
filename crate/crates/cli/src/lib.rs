//! Library half of the `hypergen` binary: run-config schema, command
//! implementations, and the error-to-exit-code mapping. The binary adds
//! argument parsing only, so everything here is testable in process.

pub mod commands;
pub mod config;
pub mod error;
