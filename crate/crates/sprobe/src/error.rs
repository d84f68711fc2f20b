//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// File does not start with the expected magic bytes.
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    /// File declares a format version this build does not understand.
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    /// File ended before the declared payload was complete.
    #[error("truncated payload: needed {needed} more bytes")]
    TruncatedPayload { needed: usize },

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid targets: {0}")]
    InvalidTargets(String),

    #[error("training data contains a single class")]
    SingleClass,

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("dataset too small: {0}")]
    DatasetTooSmall(String),

    #[error("infeasible regime: {0}")]
    InfeasibleRegime(String),

    /// Every hyperparameter candidate failed; per-candidate causes attached.
    #[error("all hyperparameter candidates failed:\n{causes}")]
    AllCandidatesFailed { causes: String },

    /// Oracle SAE threshold calibration missed the per-latent error budget.
    #[error("oracle calibration failed for {} latent(s): {}", .failures.len(), summarize(.failures))]
    CalibrationFailed { failures: Vec<(usize, f64)> },

    #[error("empty record list")]
    EmptyRecords,

    #[error("mismatched records: {0}")]
    MismatchedRecords(String),

    #[error("model family {0} does not decompose linearly per token")]
    NonLinearModel(String),

    #[error("manifest error: {0}")]
    Manifest(String),
}

fn summarize(failures: &[(usize, f64)]) -> String {
    failures
        .iter()
        .take(8)
        .map(|(i, e)| format!("latent {i} err {e:.4}"))
        .collect::<Vec<_>>()
        .join(", ")
}

pub type Result<T> = std::result::Result<T, Error>;
