use thiserror::Error;

/// Errors raised by the geometry, entropy and flow layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("singular metric at node {node}: det = {det:e} (floor {floor:e})")]
    SingularMetric { node: usize, det: f64, floor: f64 },

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("unsupported mode: {0}")]
    ModeUnsupported(String),

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("solution lost positivity at node {node} (value {value:e}, t = {t})")]
    NonPositive { node: usize, value: f64, t: f64 },

    #[error("non-finite value in {what} at node {node}")]
    NonFinite { what: &'static str, node: usize },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("invalid configuration field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("malformed checkpoint: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable label used in diagnostic records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::SingularMetric { .. } => "SingularMetric",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::ModeUnsupported(_) => "ModeUnsupported",
            Error::UnknownScenario(_) => "UnknownScenario",
            Error::NonPositive { .. } => "NonPositive",
            Error::NonFinite { .. } => "NonFinite",
            Error::InvalidGrid(_) => "InvalidGrid",
            Error::InvalidField(_) => "InvalidField",
            Error::InvalidConfig { .. } => "InvalidConfig",
            Error::Format(_) => "Format",
            Error::Io(_) => "Io",
        }
    }

    /// Whether the error means the evolving metric degenerated.
    pub fn is_blow_up(&self) -> bool {
        matches!(self, Error::SingularMetric { .. } | Error::NonFinite { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
