use thiserror::Error;

/// Errors raised by the laboratory.
///
/// Each variant corresponds to one failure class that callers (the CLI, the
/// C ABI) map onto a stable code, see [`Error::code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("exact balance infeasible: n = {n} is not divisible by 8*(K-2) = {required}")]
    BalanceInfeasible { n: usize, required: usize },

    #[error("dimension too small: d = {d} but distinct noise needs d >= {required}")]
    DimensionTooSmall { d: usize, required: usize },

    #[error("unique irrelevant features infeasible: n = {n} > K-2 = {available}")]
    UniqueInfeasible { n: usize, available: usize },

    #[error("noise covariance rank {rank} exceeds floor(m/2) = {max}")]
    RankViolation { rank: usize, max: usize },

    #[error("symmetric eigensolver did not converge")]
    ConvergenceFailure,

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("rank {rank} exceeds embedding dimension p = {p}")]
    RankExceedsP { rank: usize, p: usize },

    #[error("rank(P) = {rank} exceeds embedding dimension p = {p}; use the rank-limited solver")]
    RankTooLarge { rank: usize, p: usize },

    #[error("column space of P is not contained in that of Q (relative residual {residual:e})")]
    ColspViolation { residual: f64 },

    #[error("kernel projection of the subclass feature is degenerate (norm {norm:e})")]
    DegenerateKernel { norm: f64 },

    #[error("gradient descent diverged at epoch {epoch} (max |W| = {max_abs:e})")]
    Divergence { epoch: usize, max_abs: f64 },

    #[error("index {index} out of range (valid 1..={max})")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("class partition {0:+} is empty")]
    EmptyClass(i8),

    #[error("mode unsupported: {0}")]
    ModeUnsupported(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable numeric code used by the C ABI.
    pub fn code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) => 2,
            Error::BalanceInfeasible { .. } => 3,
            Error::DimensionTooSmall { .. } => 4,
            Error::UniqueInfeasible { .. } => 5,
            Error::RankViolation { .. } => 6,
            Error::ConvergenceFailure => 7,
            Error::NotSymmetric(_) => 8,
            Error::RankExceedsP { .. } => 9,
            Error::RankTooLarge { .. } => 10,
            Error::ColspViolation { .. } => 11,
            Error::DegenerateKernel { .. } => 12,
            Error::Divergence { .. } => 13,
            Error::IndexOutOfRange { .. } => 14,
            Error::DegenerateLabels(_) => 15,
            Error::EmptyClass(_) => 16,
            Error::ModeUnsupported(_) => 17,
            Error::ShapeMismatch(_) => 18,
            Error::Io(_) => 19,
        }
    }

    /// True for errors caused by an invalid configuration (CLI exit code 2).
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_)
                | Error::BalanceInfeasible { .. }
                | Error::DimensionTooSmall { .. }
                | Error::UniqueInfeasible { .. }
                | Error::RankViolation { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
