//! Error taxonomy and the machine-readable failure report.

use ethident_core::augment::AugmentError;
use ethident_core::baselines::BaselineError;
use ethident_core::graph::GraphError;
use ethident_core::hgate::HgateError;
use ethident_core::sampler::SamplerError;
use ethident_core::trainer::TrainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Hgate(#[from] HgateError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    /// Stable error kind for scripted consumers.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Graph(GraphError::Ingest { .. }) => "malformed_rows",
            CliError::Graph(GraphError::DuplicateConflictingLabel { .. }) => {
                "duplicate_conflicting_label"
            }
            CliError::Graph(GraphError::BadMagic) => "bad_snapshot",
            CliError::Graph(_) => "graph",
            CliError::Sampler(SamplerError::UnknownNode(_)) => "unknown_node",
            CliError::Sampler(SamplerError::InsufficientNegatives { .. }) => {
                "insufficient_negatives"
            }
            CliError::Sampler(SamplerError::NoPositives(_)) => "no_positives",
            CliError::Sampler(_) => "sampler",
            CliError::Augment(AugmentError::ResampleWithoutGraph) => "resample_without_graph",
            CliError::Augment(_) => "augment",
            CliError::Hgate(_) => "encoder",
            CliError::Train(TrainError::NonFiniteLoss { .. }) => "non_finite_loss",
            CliError::Train(TrainError::EmptySplit(_)) => "empty_split",
            CliError::Train(TrainError::SingleClassFold { .. }) => "single_class_fold",
            CliError::Train(TrainError::ZeroVector { .. }) => "zero_vector",
            CliError::Train(TrainError::Config(_)) => "config",
            CliError::Train(_) => "train",
            CliError::Baseline(BaselineError::DegenerateLabels) => "degenerate_labels",
            CliError::Baseline(_) => "baseline",
            CliError::Io { .. } => "io",
            CliError::Usage(_) => "usage",
        }
    }
}

pub fn error_json(e: &CliError) -> String {
    serde_json::json!({
        "error": {
            "kind": e.kind(),
            "message": e.to_string(),
        }
    })
    .to_string()
}

/// Wraps io errors with the offending path.
pub fn io_at(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}
