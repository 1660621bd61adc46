//! Experiment harness: suite generation, model training, decoding runs and
//! reporting, driven by a JSON run configuration.
//!
//! Output layout under `output_dir`:
//!
//! ```text
//! manifest.json
//! suite/{vocab.txt,corpus.txt,instances.jsonl,bench.json}
//! model.json                 (train)
//! results/<strategy>.jsonl   (run)
//! report.csv                 (report)
//! ```

use thiserror::Error;

pub mod commands;
pub mod config;
pub mod manifest;

pub use commands::{cmd_gen, cmd_report, cmd_run, cmd_train};
pub use config::{Overrides, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("model source failed: {0}")]
    Source(String),
    #[error("malformed results: {0}")]
    MalformedResults(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::BadConfig(_) => 2,
            CliError::Io(_) => 3,
            CliError::Source(_) => 4,
            CliError::MalformedResults(_) => 5,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<conflict_decode_core::bench::BenchError> for CliError {
    fn from(e: conflict_decode_core::bench::BenchError) -> Self {
        use conflict_decode_core::bench::BenchError;
        match e {
            BenchError::Io(io) => CliError::Io(io.to_string()),
            BenchError::Source(s) => CliError::Source(s.to_string()),
            other => CliError::BadConfig(other.to_string()),
        }
    }
}
