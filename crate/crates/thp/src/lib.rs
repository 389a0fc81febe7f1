//! Files and command-line front end for `thp-core`: JSON-lines datasets,
//! config files, model archives, a rayon batch executor and the commands
//! behind the `thp` binary.

pub mod archive;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod exec;

pub use error::{exit, Result, ThpError};
