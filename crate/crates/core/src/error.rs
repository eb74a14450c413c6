use thiserror::Error;

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("numeric divergence on client {client} in round {round}")]
    NumericDivergence { client: usize, round: usize },

    #[error("non-finite aggregation input from cache entry {entry} in round {round}")]
    NonFiniteAggregate { entry: usize, round: usize },

    #[error("client {client} has version {version} but the server is at round {round}")]
    VersionAhead {
        client: usize,
        version: u64,
        round: u64,
    },

    #[error("client {0} is both picked and deprecated in the same round")]
    PickedAndDeprecated(usize),

    #[error("cannot partition {samples} samples across {clients} clients")]
    TooManyClients { samples: usize, clients: usize },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("model dimension {got} does not match expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("round {round}: {quantity} = {value} lies outside [0, 1]")]
    AnalyticInconsistency {
        round: usize,
        quantity: &'static str,
        value: f64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl SimError {
    /// Process exit code: 1 for configuration problems, 2 for everything
    /// that goes wrong while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::Config(_) => 1,
            _ => 2,
        }
    }
}
