use std::path::PathBuf;

/// Errors produced anywhere in the pretraining pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("tensor backend: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid augmentation policy: {0}")]
    InvalidPolicy(String),

    #[error("unsupported backbone: {0}")]
    UnsupportedBackbone(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("embedding batch is not unit-norm: row {row} has norm {norm}")]
    NotNormalized { row: usize, norm: f32 },

    #[error("batch of {batch} rows exceeds queue capacity {capacity}")]
    BatchExceedsCapacity { batch: usize, capacity: usize },

    #[error("relation bank is empty")]
    EmptyBank,

    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),

    #[error("momentum coefficient must lie in [0, 1], got {0}")]
    InvalidMomentum(f64),

    #[error(
        "non-finite loss at step {step} (lr={lr}, alpha={alpha}, grad_norm={grad_norm}, loss_rel={loss_rel}, loss_nce={loss_nce})"
    )]
    NonFiniteLoss {
        step: u64,
        lr: f64,
        alpha: f64,
        grad_norm: f64,
        loss_rel: f64,
        loss_nce: f64,
    },

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("checkpoint integrity error: {0}")]
    CheckpointIntegrity(String),

    #[error("checkpoint schema version {found} is not supported (expected {expected}); migrate the checkpoint explicitly")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint config hash {found} does not match run config hash {expected}; pass --force to override")]
    ConfigHashMismatch { found: String, expected: String },

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("metrics error: {0}")]
    Metrics(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
