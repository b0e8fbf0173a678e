use thiserror::Error;

use crate::expr::{EvalError, ParseError};
use crate::market::SideId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error(transparent)]
    Eval(#[from] EvalError),

    #[error("{side} kernel at (own={own}, opp={opp}): {source}")]
    Kernel {
        side: SideId,
        own: f64,
        opp: f64,
        #[source]
        source: EvalError,
    },

    #[error("invalid distribution: {0}")]
    Distribution(String),

    #[error("{value} lies outside the support [{lo}, {hi}]")]
    OutOfSupport { value: f64, lo: f64, hi: f64 },

    #[error("density vanishes at {0}")]
    ZeroDensity(f64),

    #[error("integrand is not finite at x = {x}")]
    NonFiniteIntegrand { x: f64 },

    #[error("quadrature exceeded maximum subdivision depth {depth} near x = {x}")]
    MaxDepth { depth: usize, x: f64 },

    #[error("no sign change on [{a}, {b}] (f(a) = {fa}, f(b) = {fb})")]
    NoSignChange { a: f64, b: f64, fa: f64, fb: f64 },

    #[error("function is not finite at x = {x}")]
    NonFiniteValue { x: f64 },

    #[error("invalid interval [{a}, {b}]")]
    InvalidInterval { a: f64, b: f64 },

    #[error("invalid tolerances: {0}")]
    Tolerances(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("solver inconsistency: {0}")]
    Inconsistent(String),

    #[error("config {path}:{line}:{column}: {message}")]
    Config {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("schema: {0}")]
    Schema(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    /// True for failures that come from bad user input rather than from the
    /// numerical machinery.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Parse(_)
                | Error::Distribution(_)
                | Error::Config { .. }
                | Error::Schema(_)
                | Error::Io(_)
                | Error::Tolerances(_)
                | Error::Precondition(_)
        )
    }
}
