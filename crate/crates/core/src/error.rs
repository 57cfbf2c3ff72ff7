use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch ({}x{} vs {}x{})", .left.0, .left.1, .right.0, .right.1)]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("{op}: expected a square matrix, got {rows}x{cols}")]
    NotSquare {
        op: &'static str,
        rows: usize,
        cols: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("non-finite activation at step {step}")]
    NonFiniteActivation { step: usize },

    #[error("matrix is singular or not positive definite ({0})")]
    Singular(&'static str),

    #[error("column {column} is linearly dependent on the columns after it")]
    RankDeficient { column: usize },

    #[error("{what} did not converge within {iterations} iterations")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
    },

    #[error("series still growing after {terms} terms (last term norm {last_norm:e})")]
    SeriesDiverged { terms: usize, last_norm: f64 },

    #[error("overflow at power {power}")]
    Overflow { power: usize },

    #[error("training diverged at update {update}: loss is {loss}")]
    Divergence { update: usize, loss: f64 },

    #[error("bound violated at k = {k}: J = {value:e}, bound = {bound:e}")]
    BoundViolated { k: usize, value: f64, bound: f64 },

    #[error("corpus of {len} bytes is shorter than one window of {window}")]
    CorpusTooShort { len: usize, window: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Numerical failures (as opposed to bad input) map to a distinct exit
    /// status in the command-line tool.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteActivation { .. }
                | Error::Singular(_)
                | Error::NoConvergence { .. }
                | Error::SeriesDiverged { .. }
                | Error::Overflow { .. }
                | Error::Divergence { .. }
                | Error::BoundViolated { .. }
        )
    }
}
