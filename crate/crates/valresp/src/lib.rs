//! File formats, the experiment runner, the CLI plumbing and the HTTP
//! session service around `valresp_core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod io;
pub mod service;

pub use config::PipelineConfig;
pub use error::AppError;
