//! Experiment runner and file formats around [`o2f_core`].

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod exec;
pub mod io;

pub use error::CliError;
pub use exec::{RayonExecutor, WallClock};
