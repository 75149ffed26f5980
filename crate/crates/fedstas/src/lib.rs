//! Command-line driver, configuration and file formats for the `fedstas-core` simulator.

pub mod cli;
pub mod config;
pub mod files;
pub mod idx;
