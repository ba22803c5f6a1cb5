//! Command-line front end: config parsing, experiment runs and artifact files.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod experiment;
