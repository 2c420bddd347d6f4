//! Configuration, data generation and experiment pipeline for the
//! `hcebnn` command-line tool.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod output;
pub mod sweep;

pub use config::RunConfig;
pub use error::CliError;
