use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mean-field state: {0}")]
    InvalidState(String),

    #[error("invalid prescription: {0}")]
    InvalidPrescription(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("transition kernel row for (x={x}, a={a}) sums to {sum}, expected 1")]
    KernelNotStochastic { x: usize, a: usize, sum: f64 },

    #[error("mean-field propagation produced a negative mass {value} at type {index}")]
    NegativeMass { index: usize, value: f64 },

    #[error("environment `{0}` has no transition kernel; an exact model is required")]
    KernelUnavailable(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown environment `{0}`")]
    UnknownEnvironment(String),

    #[error("stage {stage}, grid point {grid_index}: {source}")]
    Stage {
        stage: usize,
        grid_index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("csv: {0}")]
    Csv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
