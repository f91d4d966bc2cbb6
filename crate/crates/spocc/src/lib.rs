//! Std companion to `spocc-core`: survey and draw file formats, TOML
//! configuration, parallel chains, the simulation-study harness and the
//! `spocc` command-line tool.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod fit;
pub mod io;
pub mod simstudy;

pub use error::{CliError, Result};
