//! Operator surface: experiment configuration, execution, run persistence,
//! analysis, and report rendering.

mod analyze;
mod config;
mod manifest;
mod report;
mod run;

pub use analyze::{cmd_analyze, AnalysisOutcome, FitReport};
pub use config::{
    AnalysisConfig, BenchmarkPaths, ExperimentConfig, ModelConfig, OutputConfig, RunConfig,
};
pub use manifest::{DirLock, RunManifest};
pub use report::cmd_report;
pub use run::{cmd_run, RunOutcome};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("output dir is locked by another run ({0})")]
    Locked(String),
    #[error("metrics csv: {0}")]
    Schema(String),
    #[error(transparent)]
    Ingest(#[from] crate::ingest::IngestError),
    #[error(transparent)]
    Strategy(#[from] crate::strategies::StrategyError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
    #[error(transparent)]
    Correlation(#[from] crate::correlation::CorrelationError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Prompts(#[from] crate::strategies::PromptSetError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn io_err(path: &std::path::Path, source: std::io::Error) -> HarnessError {
    HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}
