use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("integrator step size underflow at t = {t:e} (h = {h:e})")]
    StepSizeUnderflow { t: f64, h: f64 },

    #[error("integrator exceeded {0} steps")]
    TooManySteps(usize),

    #[error("integrator produced a non-finite state at t = {0:e}")]
    NonFiniteState(f64),

    #[error("integration failed for state #{index}: {source}")]
    AtState {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("integration failed at grid node {point:?}: {source}")]
    AtGridNode {
        point: Vec<f64>,
        #[source]
        source: Box<Error>,
    },

    #[error("data matrix is rank deficient: numerical rank {rank} < {expected}; increase the number of samples or lower the dictionary degree")]
    RankDeficient { rank: usize, expected: usize },

    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("matrix is singular")]
    Singular,

    #[error("point is off the Stiefel manifold (residual {0:e})")]
    OffManifold(f64),

    #[error("trajectory length mismatch: need {needed} rows, got {got}")]
    LengthMismatch { needed: usize, got: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("model file format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures that originate in the numerics rather than in
    /// user input or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::StepSizeUnderflow { .. }
                | Error::TooManySteps(_)
                | Error::NonFiniteState(_)
                | Error::AtState { .. }
                | Error::AtGridNode { .. }
                | Error::RankDeficient { .. }
                | Error::NotPositiveDefinite
                | Error::Singular
                | Error::OffManifold(_)
                | Error::Numerical(_)
        )
    }
}
