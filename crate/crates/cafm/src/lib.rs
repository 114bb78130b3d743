//! Command-line pipeline and file formats around [`cafm_core`]: frame caches,
//! workdir layout, delivery bundles on disk, reports, plots and the classical
//! codec baseline.

pub mod cli;
pub mod codec;
pub mod commands;
pub mod config;
pub mod delivery;
pub mod error;
pub mod frames;
pub mod plot;
pub mod report;
pub mod synthetic;
pub mod workdir;

pub use cafm_core as core;
pub use error::{CliError, Result};
