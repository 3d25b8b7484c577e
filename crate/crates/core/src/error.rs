use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error at row {row}: {message}")]
    Csv { row: usize, message: String },

    #[error("formula parse error at position {position}: {message}")]
    Formula { position: usize, message: String },

    #[error("unknown column '{0}'")]
    UnknownColumn(String),

    #[error("design error: {0}")]
    Design(String),

    #[error("family error: {0}")]
    Family(String),

    #[error("family '{0}' is already registered")]
    FamilyCollision(String),

    #[error("unknown family '{0}'")]
    UnknownFamily(String),

    #[error("response value {value} at row {row} is outside the support of {family}")]
    Support { row: usize, value: u64, family: String },

    #[error("non-finite value in row {row}: {what}")]
    NonFinite { row: usize, what: String },

    #[error("singular matrix ({what}): numerical rank {rank} of {dim}; dependent columns: {dependent:?}")]
    Singular {
        what: String,
        rank: usize,
        dim: usize,
        dependent: Vec<String>,
    },

    #[error("unit {unit} has zero probability of being observed")]
    ZeroInclusion { unit: usize },

    #[error("fit error: {0}")]
    Fit(String),

    #[error("stratum '{0}' selects no observed units")]
    EmptyStratum(String),

    #[error("strata error: {0}")]
    Strata(String),

    #[error("bootstrap error: {0}")]
    Bootstrap(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
