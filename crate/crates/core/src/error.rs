use thiserror::Error;

use crate::numbers::Rational;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("invalid rational {input:?}: {reason}")]
    ParseRational { input: String, reason: &'static str },

    #[error("line {line}: {message}")]
    SlpSyntax { line: usize, message: String },

    #[error("line {line}: gate {gate} references gate {operand}, which is not defined yet")]
    ForwardReference {
        line: usize,
        gate: usize,
        operand: usize,
    },

    #[error("program has no `const` line")]
    MissingConst,

    #[error("bit budget of {limit} bits exceeded at {location} ({reached} bits)")]
    BitBudget {
        limit: u64,
        reached: u64,
        location: String,
    },

    #[error("bounded-norm normalization needs constant 1, found {0}")]
    NormalizeConstant(Rational),

    #[error(
        "activation degree {0} is below 2; the product identity needs a non-linear polynomial"
    )]
    DegreeTooLow(usize),

    #[error("shifted-basis matrix is singular")]
    SingularSystem,

    #[error("invalid network: {0}")]
    Network(String),

    #[error("parameter vector has {got} entries but the network has {expected} edges")]
    ThetaMismatch { expected: usize, got: usize },

    #[error("loss is not differentiable here: {0}")]
    NotDifferentiable(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{path}: {message}")]
    Schema { path: String, message: String },
}

impl Error {
    pub(crate) fn budget(limit: u64, reached: u64, location: impl Into<String>) -> Self {
        Error::BitBudget {
            limit,
            reached,
            location: location.into(),
        }
    }

    pub fn is_bit_budget(&self) -> bool {
        matches!(self, Error::BitBudget { .. })
    }
}
