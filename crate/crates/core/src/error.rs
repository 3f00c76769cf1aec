use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("cannot differentiate a series of order 0")]
    EmptySeries,

    #[error("not invertible: {0}")]
    NotInvertible(String),

    #[error("truncation exhausted: {0}")]
    TruncationExhausted(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("indeterminate within the window: {0}")]
    Indeterminate(String),

    #[error("point is not in the big cell")]
    BigCellViolation,

    #[error("wave operator jet leaves the big cell at t-order {t_order}")]
    PoleOfLax { t_order: usize },

    #[error("window exhausted: {0}")]
    WindowExhausted(String),

    #[error("flow compatibility violated: {0}")]
    Compatibility(String),

    #[error("particles {i} and {j} collide")]
    Collision { i: usize, j: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("singular matrix")]
    Singular,

    #[error("point {0} lies on the lattice")]
    LatticePoint(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("invariant gate failed: {0}")]
    InvariantGate(String),

    #[error("syntax error at {line}:{column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("input error: {0}")]
    Input(String),
}
