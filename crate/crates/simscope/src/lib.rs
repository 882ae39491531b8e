//! Files, orchestration and the command-line front end around
//! [`simscope_core`].

pub mod cli;
pub mod compare;
pub mod config;
pub mod emit;
mod error;
pub mod format;
mod fsutil;
pub mod manifest;
pub mod run;
pub mod synth;

pub use error::{Error, Result};
pub use simscope_core as core;
