use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("graph needs at least 2 areas, got {0}")]
    EmptyGraph(usize),

    #[error("index {index} out of range for {n} areas")]
    OutOfRange { index: usize, n: usize },

    #[error("adjacency is not symmetric: area {0} lists {1} but not the reverse")]
    Asymmetric(usize, usize),

    #[error("area {0} has no country label")]
    MissingCountry(usize),

    #[error("graph is disconnected ({0} components)")]
    Disconnected(usize),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_))
    }
}
