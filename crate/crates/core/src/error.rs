use thiserror::Error;

/// Errors raised anywhere in the simulator.
///
/// `Config` errors are detected before a run starts; everything else is a
/// runtime failure. The CLI maps the two classes to different exit codes.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FirlError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty mini-batch")]
    EmptyBatch,

    #[error("A2 violated: topology is disconnected ({components} components)")]
    Disconnected { components: usize },

    #[error("invalid edge ({0}, {1}): {2}")]
    InvalidEdge(usize, usize, &'static str),

    #[error("epsilon out of range: {epsilon} not in (0, {upper})")]
    EpsilonOutOfRange { epsilon: f64, upper: f64 },

    #[error("eigen solver did not converge after {sweeps} sweeps (off-diagonal norm {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },

    #[error("slot count {got} does not match topology size {expected}")]
    SlotCount { expected: usize, got: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("zero resource cost")]
    ZeroCost,

    #[error("division by zero: {0}")]
    DivisionByZero(&'static str),

    #[error("io: {0}")]
    Io(String),
}

impl FirlError {
    /// True for errors that are caught by validation before any work is done.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            FirlError::Disconnected { .. }
                | FirlError::InvalidEdge(..)
                | FirlError::EpsilonOutOfRange { .. }
                | FirlError::Config(_)
                | FirlError::DivisionByZero(_)
        )
    }
}

impl From<std::io::Error> for FirlError {
    fn from(e: std::io::Error) -> Self {
        FirlError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, FirlError>;
