use thiserror::Error;

/// Errors produced by the estimation, simulation and experiment layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("entry {index} is negative ({value})")]
    NegativeEntry { index: usize, value: f64 },

    #[error("entry {index} exceeds one ({value})")]
    EntryAboveOne { index: usize, value: f64 },

    #[error("entries sum to {sum}, deviating from 1 by {deviation}")]
    SumNotOne { sum: f64, deviation: f64 },

    #[error("dimension {dim} is too small (need at least 2)")]
    DimensionTooSmall { dim: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("entry {index} is not finite")]
    NonFiniteEntry { index: usize },

    #[error("entry {index} times sample size {sample_size} is not an integer ({value})")]
    NonIntegralFrequency {
        index: usize,
        sample_size: u64,
        value: f64,
    },

    #[error("bit budget {bits} outside the supported range 1..=20")]
    BitsOutOfRange { bits: u32 },

    #[error("symbol {symbol} does not fit in {bits} bits")]
    SymbolOutOfRange { symbol: u32, bits: u32 },

    #[error("datapoint {datapoint} outside [0, {dim})")]
    DatapointOutOfRange { datapoint: usize, dim: usize },

    #[error("cluster has no messages")]
    EmptyCluster,

    #[error("no cluster estimates supplied")]
    EmptyInput,

    #[error("trimming {trim} per side from {clusters} clusters leaves nothing")]
    TrimTooLarge { clusters: usize, trim: usize },

    #[error("trimming proportion {omega} outside [0, 0.5)")]
    InvalidTrimFraction { omega: f64 },

    #[error("threshold parameter must be positive, got {alpha}")]
    NonPositiveAlpha { alpha: f64 },

    #[error("sample size must be positive")]
    ZeroSampleSize,

    #[error("geometric parameter {beta} outside (0, 1)")]
    BetaOutOfRange { beta: f64 },

    #[error("sparsity budget {s} exceeds dimension {dim}")]
    SBudgetExceedsDim { s: usize, dim: usize },

    #[error("perturbation draws degenerate after {attempts} attempts")]
    DegenerateDraw { attempts: usize },

    #[error("text of {len} letters is shorter than gram length {k}")]
    TextTooShort { len: usize, k: usize },

    #[error("byte {byte:#04x} is not a lowercase letter")]
    BadLetter { byte: u8 },

    #[error("gram length {k} outside 1..=4")]
    GramLengthOutOfRange { k: usize },

    #[error("degenerate counts: {0}")]
    DegenerateCounts(String),

    #[error("malformed message dump: {0}")]
    MalformedDump(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
