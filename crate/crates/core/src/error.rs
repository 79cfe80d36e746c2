use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate one-hot target: {0}")]
    DegenerateOneHot(String),

    #[error("cannot read image {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("no grain found")]
    NoGrainFound,

    #[error("image is already normalized")]
    AlreadyNormalized,

    #[error("missing class directory `{class}` under {root}")]
    MissingClass { class: String, root: PathBuf },

    #[error("class `{0}` contains no images")]
    EmptyClass(String),

    #[error("class `{class}` has {count} samples, fewer than the {splits} splits requested")]
    TooFewSamples { class: String, count: usize, splits: usize },

    #[error("input is not normalized to [0,1]: found value {0}")]
    NotNormalized(f64),

    #[error("layer {index} ({name}): {detail}")]
    Architecture { index: usize, name: String, detail: String },

    #[error("stale or missing forward cache: {0}")]
    StaleCache(String),

    #[error(transparent)]
    ModelFile(#[from] ModelFileError),

    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("singular linear system in {0}")]
    Singular(&'static str),

    #[error("exact SHAP supports at most {max} segments, got {segments}; use sampled mode or a coarser grid")]
    TooManySegments { segments: usize, max: usize },

    #[error("unknown class `{name}`; valid classes: {valid}")]
    UnknownClass { name: String, valid: String },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Failures while decoding a serialized model file.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelFileError {
    #[error("bad magic bytes (expected `RGC1`)")]
    BadMagic,

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("CRC mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Crc { stored: u32, computed: u32 },

    #[error("architecture fingerprint mismatch: expected {expected}, found {found}")]
    Fingerprint { expected: String, found: String },

    #[error("malformed model file: {0}")]
    Malformed(String),
}

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape { op, detail: detail.into() }
}
