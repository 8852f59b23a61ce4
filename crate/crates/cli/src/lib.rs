//! File formats, configuration and command-line front end for `hoi-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod fixtures;
pub mod formats;
pub mod pipeline;
pub mod tensor;

pub use config::RunConfig;
pub use error::{Error, Result};
