use std::path::PathBuf;

/// Errors produced by the numerical routines and file readers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("operator has non-finite entries")]
    NonFinite,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("operator is zero")]
    ZeroOperator,

    #[error("symmetric eigensolver did not converge")]
    EigenNoConvergence,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cluster index {index} out of range (1..={count})")]
    ClusterIndex { index: usize, count: usize },

    #[error("spectral gap undefined for cluster {0}")]
    UndefinedGap(usize),

    #[error("contour point {point} lies within {distance:e} of the spectrum")]
    NearSpectrum { point: String, distance: f64 },

    #[error("imaginary residual {residual:e} exceeds tolerance {tolerance:e}")]
    ImaginaryResidual { residual: f64, tolerance: f64 },

    #[error("cluster {index} has multiplicity {multiplicity}, expected 1")]
    Multiplicity { index: usize, multiplicity: usize },

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("1 + b = {value} is below the debiasing floor {floor}")]
    DebiasFloor { value: f64, floor: f64 },

    #[error("sample count {0} is not even")]
    OddSampleCount(usize),

    #[error("cluster {index} is not separated: |E| = {norm_e} >= gap/2 = {half_gap}")]
    NotSeparated { index: usize, norm_e: f64, half_gap: f64 },

    #[error("{fraction} of replicates violated separation (limit {limit})")]
    TooManyNonSeparated { fraction: f64, limit: f64 },

    #[error("predicted variance is zero but samples have variance {0:e}")]
    ZeroPredictedVariance(f64),

    #[error("{path}: row {row} has {found} fields, expected {expected}")]
    RaggedRow {
        path: PathBuf,
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
