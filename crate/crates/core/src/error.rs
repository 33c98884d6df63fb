use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("forward cache is empty; call forward before backward")]
    MissingCache,
    #[error("label {label} out of range 0..{classes}")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("layer {layer} has no active channel left; reduce lambda")]
    EmptyLayer { layer: &'static str },
    #[error("degenerate quantization range [{alpha}, {beta}]")]
    DegenerateRange { alpha: f64, beta: f64 },
    #[error("batch-norm variance plus eps must be positive (channel {channel})")]
    BadVariance { channel: usize },
    #[error("accumulator may overflow 32 bits in layer {layer}: bound {bound}")]
    AccumulatorOverflow { layer: String, bound: i128 },
    #[error("lane width mismatch: expected {expected}-bit, got {got}-bit")]
    WidthMismatch { expected: u32, got: u32 },
    #[error("value {value} out of {bits}-bit lane range")]
    LaneRange { value: i32, bits: u32 },
    #[error(transparent)]
    Sim(#[from] crate::isa::SimError),
    #[error(transparent)]
    Asm(#[from] crate::isa::AsmError),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("model file: {0}")]
    Format(String),
    #[error("checksum mismatch for blob `{0}`")]
    Checksum(String),
    #[error("unsupported model file version {0}")]
    Version(u16),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
