use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the SST pipeline.
#[derive(Debug, Error)]
pub enum SstError {
    #[error("empty ocean domain")]
    EmptyOceanDomain,
    #[error("degenerate constant field")]
    DegenerateField,
    #[error("double normalization")]
    DoubleNormalization,
    #[error("expected normalized input, got physical-space data")]
    NotNormalized,
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("misaligned inputs: {0}")]
    Misaligned(String),

    #[error("unrecognized container")]
    UnrecognizedContainer,
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),
    #[error("dimension mismatch with header: {0}")]
    HeaderMismatch(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("invalid metadata in {path}: {reason}")]
    Metadata { path: PathBuf, reason: String },

    #[error("empty batch")]
    EmptyBatch,
    #[error("divergence at epoch {epoch} ({stage})")]
    Divergence { stage: &'static str, epoch: usize },
    #[error("incompatible prior pair: encoder emits {encoder} latents, generator expects {generator}")]
    IncompatiblePrior { encoder: usize, generator: usize },
    #[error("invalid loss weight: {0}")]
    InvalidWeight(String),
    #[error("series too short: {0}")]
    SeriesTooShort(String),
    #[error("insufficient history: {0}")]
    InsufficientHistory(String),
    #[error("undefined R2: truth has zero variance")]
    UndefinedR2,
    #[error("unknown scheme `{0}`")]
    UnknownScheme(String),

    #[error("unknown key `{key}` in [{section}]")]
    UnknownKey { section: String, key: String },
    #[error("type mismatch for `{key}`: expected {expected}")]
    TypeMismatch { key: String, expected: &'static str },
    #[error("constraint violated for `{key}`: {reason}")]
    Constraint { key: String, reason: String },
    #[error("config syntax error: {0}")]
    ConfigSyntax(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<SstError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SstError>;
