use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("constitutive error: {0}")]
    Constitutive(String),

    #[error("discretization error: {0}")]
    Discretization(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("preconditioner build error: {0}")]
    PrecondBuild(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("simulation error: {0}")]
    Simulation(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
