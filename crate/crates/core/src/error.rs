use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: expected length {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("degenerate system: {0}")]
    DegenerateSystem(String),

    #[error("non-finite state: {0}")]
    NonFiniteState(String),

    #[error("resolvent solve failed after {iterations} Newton iterations (residual {residual:e})")]
    ResolventFailure { iterations: usize, residual: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("cannot build negative-energy data: {0}")]
    NegativeEnergy(String),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("mesh file line {line}: {msg}")]
    MeshFormat { line: usize, msg: String },
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape { expected, got })
    }
}
