//! File formats, parallel certification and the command-line pipeline built
//! on `ccstat-core`.

pub mod cli;
pub mod error;
pub mod experiment;
mod json;
pub mod parallel;
pub mod problem;
pub mod report;
pub mod samples;
pub mod tables;

pub use error::{Error, Result};
