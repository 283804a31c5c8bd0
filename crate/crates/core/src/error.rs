use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// The general cross-study formula divides by the gap between the two
    /// companion transforms; it is unusable when they coincide.
    #[error(
        "cross term is singular: companion transforms {a} and {b} are not separated; \
         use the equal-design mode or perturb one penalty"
    )]
    SingularCrossTerm { a: f64, b: f64 },

    #[error("numerically singular system: {0}")]
    Singular(String),

    #[error("matrix is not positive semidefinite (smallest eigenvalue {0:e})")]
    NotPositiveSemidefinite(f64),

    #[error("prediction limits require predictors scaled to unit variance")]
    NotStandardized,

    #[error("parameters outside the equal-parameter identity regime: {0}")]
    OutsideRegime(String),
}

impl Error {
    /// Errors caused by ill-conditioned numerics rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularCrossTerm { .. } | Error::Singular(_) | Error::NotPositiveSemidefinite(_)
        )
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn mismatch(msg: impl Into<String>) -> Error {
    Error::DimensionMismatch(msg.into())
}
