use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad user-supplied value: an allele outside the alphabet, a probability
    /// outside [0, 1], an empty dataset and so on.
    #[error("input error: {0}")]
    Input(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A dataset that parsed but violates the structural invariants.
    #[error("dataset is invalid: {}", .0.join("; "))]
    InvalidDataset(Vec<String>),

    /// The enumeration oracle refuses instances above its term budget.
    #[error("resource bound exceeded: {terms} terms estimated, limit {limit}")]
    ResourceBound { terms: u128, limit: u128 },

    #[error("sampler failure: {0}")]
    Sampler(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
}
