use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the solver, retrieval and harness layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value {value} at index {index} of {what}")]
    NonFinite {
        what: &'static str,
        index: usize,
        value: f64,
    },

    #[error("solver state became non-finite at step {step}")]
    NonFiniteState { step: u64 },

    #[error("CFL violation: max|u| = {max_velocity:.6e}, dt = {dt:.6e}, admissible dt <= {admissible_dt:.6e}")]
    Cfl {
        max_velocity: f64,
        dt: f64,
        admissible_dt: f64,
    },

    #[error("grid mismatch: expected {expected_nx}x{expected_ny}, got {nx}x{ny}")]
    GridMismatch {
        expected_nx: usize,
        expected_ny: usize,
        nx: usize,
        ny: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("zero-norm vector in argument {argument}")]
    ZeroNorm { argument: &'static str },

    #[error("zero-norm truth frame at trajectory {trajectory}, step {step}")]
    ZeroNormTruth { trajectory: usize, step: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient samples: {samples} samples for {components} components")]
    InsufficientSamples { samples: usize, components: usize },

    #[error("latent key (trajectory {trajectory_id}, frame {frame_id}) not found")]
    MissingLatent { trajectory_id: u32, frame_id: u32 },

    #[error("empty database")]
    EmptyDatabase,

    #[error("{path}: bad magic {found:?}, expected {expected:?}")]
    BadMagic {
        path: PathBuf,
        expected: [u8; 4],
        found: [u8; 4],
    },

    #[error("{path}: truncated, expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("{path}: duplicate latent key (trajectory {trajectory_id}, frame {frame_id})")]
    DuplicateKey {
        path: PathBuf,
        trajectory_id: u32,
        frame_id: u32,
    },

    #[error("{path}: invalid header: {reason}")]
    InvalidHeader { path: PathBuf, reason: String },

    /// `line` is 0 for settings that did not come from a file line.
    #[error("config error{}: {reason}", at_line(*line))]
    Config { line: usize, reason: String },

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("missing input: {0}")]
    MissingInput(PathBuf),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier, used in machine-parsable CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NonFinite { .. } => "non_finite",
            Error::NonFiniteState { .. } => "non_finite_state",
            Error::Cfl { .. } => "cfl",
            Error::GridMismatch { .. } => "grid_mismatch",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::ZeroNorm { .. } => "zero_norm",
            Error::ZeroNormTruth { .. } => "zero_norm_truth",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::InsufficientSamples { .. } => "insufficient_samples",
            Error::MissingLatent { .. } => "missing_latent",
            Error::EmptyDatabase => "empty_database",
            Error::BadMagic { .. } => "bad_magic",
            Error::Truncated { .. } => "truncated",
            Error::DuplicateKey { .. } => "duplicate_key",
            Error::InvalidHeader { .. } => "invalid_header",
            Error::Config { .. } => "config",
            Error::Protocol(_) => "protocol",
            Error::MissingInput(_) => "missing_input",
            Error::Io { .. } => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

fn at_line(line: usize) -> String {
    if line == 0 {
        String::new()
    } else {
        format!(" at line {line}")
    }
}
