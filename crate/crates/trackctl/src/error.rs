use std::fmt;

/// Error type shared by all toolkit modules.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A square matrix was required.
    NonSquare { rows: usize, cols: usize },
    /// Operand dimensions are incompatible.
    DimensionMismatch { context: &'static str, expected: usize, got: usize },
    /// Linear system is numerically singular (condition estimate above 1e14).
    Singular { cond_estimate: f64 },
    /// The pair (A, b) is not controllable: the canonical transform is singular.
    NotControllable { cond_estimate: f64 },
    /// The output row annihilates every canonical column; only f = 0 is trackable.
    AllZeroOutput,
    /// The target does not expose enough exact derivatives.
    InsufficientRegularity { needed: usize, available: usize },
    /// Target and initial state disagree at t = 0.
    CompatibilityViolation { mismatch: f64 },
    /// Dense assembly would exceed the entry budget.
    TooLarge { entries: usize, limit: usize },
    /// A modal coefficient c_k vanishes; that component cannot be tracked.
    ZeroCoefficient { index: usize },
    /// Iterative solver hit its iteration cap.
    NoConvergence { iters: usize, residual: f64 },
    Io(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NonSquare { rows, cols } => {
                write!(f, "matrix must be square, got {rows}x{cols}")
            }
            Error::DimensionMismatch { context, expected, got } => {
                write!(f, "dimension mismatch in {context}: expected {expected}, got {got}")
            }
            Error::Singular { cond_estimate } => {
                write!(f, "matrix is numerically singular (cond ~ {cond_estimate:.3e})")
            }
            Error::NotControllable { cond_estimate } => write!(
                f,
                "pair (A, b) is not controllable: transform condition ~ {cond_estimate:.3e}"
            ),
            Error::AllZeroOutput => {
                write!(f, "output row annihilates all canonical directions; only f = 0 is trackable")
            }
            Error::InsufficientRegularity { needed, available } => write!(
                f,
                "target must provide {needed} exact derivatives, only {available} available"
            ),
            Error::CompatibilityViolation { mismatch } => {
                write!(f, "target incompatible with initial state: |f(0) - E x0| = {mismatch:.3e}")
            }
            Error::TooLarge { entries, limit } => {
                write!(f, "dense assembly of {entries} entries exceeds limit {limit}")
            }
            Error::ZeroCoefficient { index } => {
                write!(f, "modal coefficient c[{index}] is zero; component untrackable")
            }
            Error::NoConvergence { iters, residual } => {
                write!(f, "solver hit the iteration cap ({iters}) at residual {residual:.3e}")
            }
            Error::Io(msg) => write!(f, "io error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
