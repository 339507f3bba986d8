use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("order {order} out of range 0..={max}")]
    OrderOutOfRange { order: usize, max: usize },

    #[error("matrix is singular: {0}")]
    Singular(String),

    #[error("matrix is rank deficient: {0}")]
    RankDeficient(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    /// The residual sum of squares of the full model is zero, so the
    /// variance estimate and every t-statistic are undefined.
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("density undefined: {0}")]
    DensityUndefined(String),

    /// An experiment was asked to run on a fixture that violates its
    /// hypothesis (for instance a tube sweep without a correlated order).
    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable tag used by the CLI's JSON error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::OrderOutOfRange { .. } => "order_out_of_range",
            Error::Singular(_) => "singular",
            Error::RankDeficient(_) => "rank_deficient",
            Error::NotPositiveDefinite(_) => "not_positive_definite",
            Error::DegenerateSample(_) => "degenerate_sample",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::DensityUndefined(_) => "density_undefined",
            Error::HypothesisViolated(_) => "hypothesis_violated",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
