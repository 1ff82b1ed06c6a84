use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("matrix is singular to working precision (condition estimate {condition:e})")]
    Singular { condition: f64 },

    #[error("generator needs at least 2 states, got {0}")]
    TooFewStates(usize),

    #[error("row {row} of the generator sums to {sum:e}, expected 0")]
    RowSum { row: usize, sum: f64 },

    #[error("negative off-diagonal rate {value} at ({row}, {col})")]
    NegativeRate { row: usize, col: usize, value: f64 },

    #[error("generator is reducible: state {to} cannot be reached from state {from}")]
    Reducible { from: usize, to: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{0}")]
    Infeasible(String),

    #[error(
        "threshold grid has {points:.3e} points per improvement step, above the cap of {cap:.0e}; \
         use a coarser delta_tau, a smaller tau_max, or the eat family"
    )]
    GridTooLarge { points: f64, cap: f64 },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
