use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A model or run parameter is outside its admissible range.
    #[error("invalid value for `{key}`: {reason}")]
    InvalidParameter { key: String, reason: String },

    /// The logit transform is undefined on the boundary of the state interval.
    #[error("{variable} = {value} lies on the boundary of [0, {upper}]; the logit transform is undefined there")]
    BoundaryTransform {
        variable: &'static str,
        value: f64,
        upper: f64,
    },

    #[error("invalid grid: {0}")]
    Grid(String),

    /// Every grid node (or particle weight) vanished.
    #[error("filter collapse at t = {t}: conditional law has no remaining mass")]
    FilterCollapse { t: f64 },

    /// A literal explicit step was asked to run past its stability limit.
    #[error("explicit step unstable: dt = {dt} exceeds the limit {limit}")]
    Unstable { dt: f64, limit: f64 },

    #[error("config error in `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("{0}")]
    Mismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    /// True for failures of the numerical schemes themselves, as opposed to
    /// bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::FilterCollapse { .. } | Error::Unstable { .. })
    }
}
