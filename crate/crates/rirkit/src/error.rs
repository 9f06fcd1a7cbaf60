//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("sample rate mismatch: {left} Hz vs {right} Hz")]
    SampleRateMismatch { left: u32, right: u32 },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("input length {input_len} is shorter than the plan's receptive field (needs at least {required})")]
    InputTooShort { input_len: usize, required: usize },

    #[error("RIR has no energy (all samples zero)")]
    ZeroEnergyRir,

    #[error("insufficient decay range: EDC never reaches {required_db} dB")]
    InsufficientDecay { required_db: f64 },

    #[error("boundary {boundary} out of range for length {len}")]
    BoundaryOutOfRange { boundary: usize, len: usize },

    #[error("early/late boundary mismatch: {left} vs {right}")]
    BoundaryMismatch { left: usize, right: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("negative loss component: {name} = {value}")]
    NegativeLossComponent { name: &'static str, value: f64 },

    #[error("vector dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("code {code} out of range for codebook size {codebook_size}")]
    CodeOutOfRange { code: u32, codebook_size: usize },

    #[error("duplicate id: {0}")]
    DuplicateId(String),

    #[error("store is empty")]
    EmptyStore,

    #[error("query embedding has zero norm")]
    ZeroNormQuery,

    #[error("batch size mismatch: {left} vs {right}")]
    BatchSizeMismatch { left: usize, right: usize },

    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),

    #[error("RIR length {len} is shorter than the splice end {required}")]
    RirTooShort { len: usize, required: usize },

    #[error("absorption coefficient out of [0, 1]: {0}")]
    CoefficientOutOfRange(f64),

    #[error("material database has no entry named \"default\" to fall back on")]
    MissingDefaultEntry,

    #[error("segmentation label {0} has no name entry")]
    UnmappedLabel(u16),

    #[error("grid dimension mismatch: {left_w}x{left_h} vs {right_w}x{right_h}")]
    GridDimMismatch {
        left_w: usize,
        left_h: usize,
        right_w: usize,
        right_h: usize,
    },

    #[error("position {0:?} is not strictly inside the room")]
    OutsideRoom([f64; 3]),

    #[error("source and listener positions coincide")]
    CoincidentPositions,

    #[error("total wall absorption is zero")]
    ZeroAbsorption,

    #[error("WAV error: {0}")]
    Wav(String),

    #[error("file format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
