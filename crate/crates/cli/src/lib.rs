//! Batch driver for the attention-correctness experiments: dataset
//! generation, training, attention and caption evaluation, and reports.

pub mod cli;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod records;
pub mod report;

pub use cli::{run, Cli};
pub use config::RunConfig;
