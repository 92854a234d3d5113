//! Command-line front end for the `eraps` binary: configuration, CSV
//! ingestion and the `run`, `sweep`, `verify` and `ingest-check`
//! subcommands.

pub mod commands;
pub mod config;
pub mod ingest;

pub use config::{Overrides, Purpose, RunConfig};
