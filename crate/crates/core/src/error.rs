use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("infeasible acceleration: {lines} lines per frame cannot hold the {upsilon} navigator lines")]
    InfeasibleAcceleration { lines: usize, upsilon: usize },

    #[error("tensor file format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("numerical degeneracy: {0}")]
    Numerical(String),

    #[error("state violates constraints: {0}")]
    State(String),

    #[error("solver diverged at iteration {iteration}: non-finite result in {subtask}")]
    Divergence { iteration: usize, subtask: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("run with seed {seed} failed: {source}")]
    Seeded {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// The innermost error, skipping seed attribution.
    pub fn root(&self) -> &Error {
        match self {
            Error::Seeded { source, .. } => source.root(),
            e => e,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
