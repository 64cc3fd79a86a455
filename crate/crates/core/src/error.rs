use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("log of non-positive value {value}")]
    LogDomain { value: f64 },

    #[error("root must be a scalar, got shape {shape:?}")]
    RootNotScalar { shape: Vec<usize> },

    #[error("variable does not belong to this tape")]
    ForeignVar,

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("negative weight {weight} (sigma {sigma}, rho {rho}, score {score})")]
    NegativeWeight {
        weight: f64,
        sigma: f64,
        rho: f64,
        score: f64,
    },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("zero variance in {axis}; correlation undefined")]
    ZeroVariance { axis: &'static str },

    #[error("bad magic {found:#010x} in {path}")]
    BadMagic { path: PathBuf, found: u32 },

    #[error("truncated file {path}: {detail}")]
    Truncated { path: PathBuf, detail: String },

    #[error("non-finite {quantity} at epoch {epoch}, step {step}")]
    TrainingDiverged {
        epoch: usize,
        step: usize,
        quantity: &'static str,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
