use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("covariance system is ill-conditioned: Cholesky failed with jitter up to {jitter:e}")]
    IllConditioned { jitter: f64 },

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("missing reference map at {0}; run the `reference` subcommand first")]
    MissingReference(String),

    #[error("hyper-parameter optimization failed: {0}")]
    Optimizer(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
