//! Crate-wide error type with stable, machine-parseable codes.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("backward requires a scalar loss, got shape {0}x{1}")]
    NonScalarLoss(usize, usize),

    #[error("atan2 is undefined at the origin (|y| and |x| both below 1e-30)")]
    Atan2Origin,

    #[error("invalid argument for {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("resample budget {n} is below the minimum of {min} for this sketch")]
    ResampleBudget { n: usize, min: usize },

    #[error("degenerate sketch: all points coincide")]
    DegenerateSketch,

    #[error("degenerate keypoints: source set has no spread")]
    DegenerateKeypoints,

    #[error("empty point set passed to {0}")]
    EmptyPointSet(&'static str),

    #[error("stroke transform count {got} does not match stroke count {want}")]
    TransformCount { got: usize, want: usize },

    #[error("exemplar has no labels")]
    UnlabeledExemplar,

    #[error("label count {got} does not match point count {want}")]
    LabelCount { got: usize, want: usize },

    #[error("evaluation has no unmasked points")]
    EmptyEvaluation,

    #[error("evaluation has no components")]
    NoComponents,

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("gradient contains NaN; step rejected ({0})")]
    NanGradient(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("too many labels for the palette: {0} > 64")]
    PaletteOverflow(usize),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable one-token code for CLI output and scripted checks.
    pub fn code(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::NonScalarLoss(..) => "non_scalar_loss",
            Error::Atan2Origin => "atan2_origin",
            Error::InvalidArgument { .. } => "invalid_argument",
            Error::ResampleBudget { .. } => "resample_budget",
            Error::DegenerateSketch => "degenerate_sketch",
            Error::DegenerateKeypoints => "degenerate_keypoints",
            Error::EmptyPointSet(_) => "empty_point_set",
            Error::TransformCount { .. } => "transform_count",
            Error::UnlabeledExemplar => "unlabeled_exemplar",
            Error::LabelCount { .. } => "label_count",
            Error::EmptyEvaluation => "empty_evaluation",
            Error::NoComponents => "no_components",
            Error::NonFinite(_) => "non_finite",
            Error::NanGradient(_) => "nan_gradient",
            Error::Diverged(_) => "diverged",
            Error::Parse { .. } => "parse",
            Error::Config(_) => "config",
            Error::Checkpoint(_) => "checkpoint",
            Error::PaletteOverflow(_) => "palette_overflow",
            Error::Io { .. } => "io",
        }
    }
}
