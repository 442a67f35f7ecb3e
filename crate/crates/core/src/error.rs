use thiserror::Error;

/// Named violations raised by `model::validate`.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("NonPositiveRate: lambda must be > 0 (got {0})")]
    NonPositiveRate(f64),
    #[error("NonPositivePremium: c must be > 0 (got {0})")]
    NonPositivePremium(f64),
    #[error("NegativeSigma: sigma must be >= 0 (got {0})")]
    NegativeSigma(f64),
    #[error("NonPositiveDiscount: q must be > 0 (got {0})")]
    NonPositiveDiscount(f64),
    #[error("RNotInUnitInterval: r must lie in (0, 1] (got {0})")]
    RNotInUnitInterval(f64),
    #[error("NegativeDelay: d must be >= 0 (got {0})")]
    NegativeDelay(f64),
    #[error("NegativeLoading: c <= lambda * E[C] (loading theta = {theta})")]
    NegativeLoading { theta: f64 },
    #[error("InvalidDensity: {0}")]
    InvalidDensity(String),
    #[error("NonFinite: parameter {0} is not finite")]
    NonFinite(&'static str),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("AtomNotDensity: the sigma = 0, k = 0 term is an atom at t = y/c, not a density")]
    AtomNotDensity,
    #[error("non-convergence in {what}: {detail}")]
    NonConvergence { what: &'static str, detail: String },
    #[error("degenerate: {0}")]
    Degenerate(String),
    #[error("a_max too small: argmin of h' sits at the right edge a_max = {a_max}; enlarge a_max")]
    AMaxTooSmall { a_max: f64 },
    #[error("insufficient left support: need g down to {needed}, have {available}")]
    InsufficientSupport { needed: f64, available: f64 },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Model(_)
                | Error::InvalidArgument(_)
                | Error::GridMismatch(_)
                | Error::AMaxTooSmall { .. }
        )
    }

    pub fn is_non_convergence(&self) -> bool {
        matches!(self, Error::NonConvergence { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
