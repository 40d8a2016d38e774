use std::path::{Path, PathBuf};

use tdreg::evaluate::EvalError;
use tdreg::features::FeatureError;
use tdreg::fit::FitError;
use tdreg::ingest::IngestError;
use tdreg::synth::SynthError;
use tdreg::tdobject::TdError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Output(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Td(#[from] TdError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            Self::Config(_) => "cli.config",
            Self::Io { .. } => "cli.io",
            Self::Output(_) => "cli.output",
            Self::Ingest(e) => e.code(),
            Self::Features(e) => e.code(),
            Self::Td(e) => e.code(),
            Self::Fit(e) => e.code(),
            Self::Eval(e) => e.code(),
            Self::Synth(e) => e.code(),
        }
    }

    /// Process exit status, one per error category.
    pub fn exit_code(&self) -> i32 {
        match self.code().split('.').next().unwrap_or("") {
            "cli" => match self {
                Self::Config(_) => 2,
                _ => 8,
            },
            "ingest" => 3,
            "features" | "tdobject" | "distribution" | "basis" | "grid" => 4,
            "fit" => 5,
            "evaluate" => 6,
            "synth" => 7,
            _ => 1,
        }
    }
}
