use thiserror::Error;

/// Errors raised anywhere in the clustering pipeline.
#[derive(Debug, Error)]
pub enum AeclError {
    #[error("view shape mismatch: view0 is {view0:?}, view1 is {view1:?}")]
    ViewShapeMismatch {
        view0: (usize, usize),
        view1: (usize, usize),
    },
    #[error("invalid embedding value at row {row}, column {col}")]
    InvalidEmbeddingValue { row: usize, col: usize },
    #[error("degenerate embedding row {0}")]
    DegenerateRow(usize),
    #[error("label count mismatch: {labels} labels for {samples} samples")]
    LabelCountMismatch { labels: usize, samples: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("degenerate augmentation: mask probability {0} must lie in [0, 1)")]
    DegenerateAugmentation(f64),
    #[error("dataset smaller than batch size ({samples} < {batch_size})")]
    DatasetTooSmall { samples: usize, batch_size: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("contrastive loss undefined for N<2")]
    ContrastiveUndefined,
    #[error("cluster loss undefined for M<2")]
    ClusterLossUndefined,
    #[error("invalid pseudo-label {label} for {clusters} clusters")]
    InvalidPseudoLabel { label: usize, clusters: usize },
    #[error("missing loss component {component} for stage {stage}")]
    MissingComponent { component: &'static str, stage: u8 },
    #[error("fewer points than clusters ({points} < {clusters})")]
    FewerPointsThanClusters { points: usize, clusters: usize },
    #[error("stage budget exceeds total epochs ({stage1} + {stage2} > {total})")]
    StageBudget {
        stage1: usize,
        stage2: usize,
        total: usize,
    },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parameters diverged to non-finite values in epoch {0}")]
    Diverged(usize),
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },
    #[error("checkpoint parse error: {0}")]
    CheckpointParse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse failure classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Runtime,
}

impl AeclError {
    pub fn kind(&self) -> ErrorKind {
        use AeclError::*;
        match self {
            Config(_) | StageBudget { .. } | DegenerateAugmentation(_) => ErrorKind::Config,
            ViewShapeMismatch { .. }
            | InvalidEmbeddingValue { .. }
            | DegenerateRow(_)
            | LabelCountMismatch { .. }
            | LabelOutOfRange { .. }
            | DatasetTooSmall { .. }
            | FewerPointsThanClusters { .. }
            | Parse { .. }
            | CheckpointParse(_)
            | Io(_) => ErrorKind::Data,
            _ => ErrorKind::Runtime,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        AeclError::Parse {
            context: context.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, AeclError>;
