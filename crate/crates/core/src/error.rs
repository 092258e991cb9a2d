use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {what} has length {got}, expected {expected}")]
    Dimension {
        what: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("unknown built-in network `{0}`")]
    UnknownNetwork(String),

    #[error("state {state:?} lies outside the hard bounds of the network")]
    OutOfBounds { state: Vec<i64> },

    #[error("invalid rate parameter: {0}")]
    InvalidParameter(String),

    #[error("total propensity is not finite at state {state:?}")]
    PropensityOverflow { state: Vec<i64> },

    #[error("observation horizon {requested} exceeds simulated path end {t_end}")]
    HorizonExceeded { requested: f64, t_end: f64 },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("region volume overflows the index type")]
    VolumeOverflow,

    #[error("dense matrix of dimension {dim} is too large for scaling and squaring; use uniformisation")]
    DenseTooLarge { dim: usize },

    #[error("numerical error in matrix exponential action: {0}")]
    Numerical(String),

    #[error("region index {requested} exceeds the safety cap r_max = {cap}")]
    RegionCap { requested: usize, cap: usize },

    #[error("state space is unbounded; exact likelihood needs finite hard upper bounds")]
    Unbounded,

    #[error("numerical consistency violated: {0}")]
    Consistency(String),

    #[error("invalid configuration at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("chain failed at iteration {iteration}: {source}")]
    Chain {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("degenerate covariance estimate: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl Error {
    /// Stable machine-readable name of the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::InvalidNetwork(_) => "invalid_network",
            Error::UnknownNetwork(_) => "unknown_network",
            Error::OutOfBounds { .. } => "out_of_bounds",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::PropensityOverflow { .. } => "propensity_overflow",
            Error::HorizonExceeded { .. } => "horizon_exceeded",
            Error::InvalidDataset(_) => "invalid_dataset",
            Error::VolumeOverflow => "volume_overflow",
            Error::DenseTooLarge { .. } => "dense_too_large",
            Error::Numerical(_) => "numerical",
            Error::RegionCap { .. } => "region_cap",
            Error::Unbounded => "unbounded",
            Error::Consistency(_) => "consistency",
            Error::Config { .. } => "config",
            Error::Chain { .. } => "chain",
            Error::Degenerate(_) => "degenerate",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }

    /// Offending configuration field, if any.
    pub fn field(&self) -> Option<&str> {
        match self {
            Error::Config { field, .. } => Some(field),
            Error::Chain { source, .. } => source.field(),
            _ => None,
        }
    }
}
