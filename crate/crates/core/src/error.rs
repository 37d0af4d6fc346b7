use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid level scheme: {0}")]
    InvalidScheme(String),

    #[error("invalid pulse shape: {0}")]
    InvalidShape(String),

    #[error("invalid pulse train: {0}")]
    InvalidTrain(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("fit failed: {0}")]
    FitFailure(String),

    #[error("target P854 = {target} is unreachable (ceiling {ceiling})")]
    UnreachableTarget { target: f64, ceiling: f64 },

    #[error("calibration failed: {0}")]
    CalibrationFailure(String),

    #[error("propagation failed at t = {time:e} s: {reason}")]
    Propagation { time: f64, reason: String },

    #[error("unknown emission channel `{0}`")]
    UnknownChannel(String),

    #[error("mean back-decay number undefined: {0}")]
    UndefinedMeanN(String),

    #[error("visibility undefined: {0}")]
    UndefinedVisibility(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("insufficient delay span: {0}")]
    InsufficientSpan(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors that come from the numerics rather than bad inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::FitFailure(_)
                | Error::CalibrationFailure(_)
                | Error::Propagation { .. }
                | Error::UndefinedMeanN(_)
                | Error::UndefinedVisibility(_)
                | Error::NonFinite(_)
        )
    }
}
