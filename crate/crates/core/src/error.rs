use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures raised by model construction, the numerical kernels and the
/// solvers. Indices carried in variants are 0-based.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix must be square with at least 2 states, got {rows}x{cols}")]
    BadShape { rows: usize, cols: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFiniteEntry { row: usize, col: usize },
    #[error("negative off-diagonal rate {value} at ({row}, {col})")]
    NegativeOffDiagonal { row: usize, col: usize, value: f64 },
    #[error("row {row} sums to {residual:e}, expected 0")]
    NonzeroRowSum { row: usize, residual: f64 },
    #[error("state {state} is absorbing (holding rate {rate})")]
    AbsorbingState { state: usize, rate: f64 },
    #[error("generator is not irreducible")]
    Reducible,
    #[error("index {index} out of range for {len} states")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("singular matrix in {0}")]
    SingularMatrix(&'static str),
    #[error("conditioning event has probability {probability:e}")]
    ConditioningOnNull { probability: f64 },
    #[error("diagonal entry {index} is not strictly negative")]
    ZeroDiagonal { index: usize },
    #[error("invalid absorbing chain: {0}")]
    InvalidChain(String),
    #[error("waiting phase absorbs with probability 1 - {survival:e} before the threshold")]
    ThresholdAbsorbsAll { survival: f64 },
    #[error("invalid threshold {value} for state {state}")]
    InvalidThreshold { state: usize, value: f64 },
    #[error("synchronization chain system is singular")]
    SingularChain,
    #[error("value determination system is singular")]
    SingularSystem,
    #[error("bisection stopped after {iterations} steps at lambda {lambda} with rate {rate} (budget {budget})")]
    BisectionFailed { iterations: usize, lambda: f64, rate: f64, budget: f64 },
    #[error("no grid point meets budget {budget}")]
    InfeasibleBudget { budget: f64 },
    #[error("script event {index} at time {time} is not after the previous event")]
    NonMonotoneScript { index: usize, time: f64 },
    #[error("poisson calibration failed for budget {budget}")]
    CalibrationFailed { budget: f64 },
    #[error("contour mode needs a 2-state source, got {n} states")]
    NotBinary { n: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// True for errors caused by malformed inputs rather than numerical
    /// breakdown.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::BadShape { .. }
                | Error::NonFiniteEntry { .. }
                | Error::NegativeOffDiagonal { .. }
                | Error::NonzeroRowSum { .. }
                | Error::AbsorbingState { .. }
                | Error::Reducible
                | Error::IndexOutOfRange { .. }
                | Error::InvalidThreshold { .. }
                | Error::NonMonotoneScript { .. }
                | Error::NotBinary { .. }
                | Error::InvalidArgument(_)
        )
    }
}
