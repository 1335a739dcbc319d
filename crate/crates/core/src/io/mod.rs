//! Scenario documents and trace export.

use std::path::PathBuf;

use thiserror::Error;

mod scenario_file;
mod trace_csv;

pub use scenario_file::*;
pub use trace_csv::{format_value, trace_header, write_trace, write_trace_to};

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Parse(serde_json::Error),
    #[error("unsupported schema version {found} (this build reads version {expected})")]
    Version { found: u32, expected: u32 },
    #[error("invalid field `{field}`: {message}")]
    Invalid { field: String, message: String },
}

#[derive(Debug, Error)]
#[error("cannot write trace to {}: {source}", path.display())]
pub struct TraceWriteError {
    pub path: PathBuf,
    pub source: std::io::Error,
}
