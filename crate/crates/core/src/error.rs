use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate element {element} (volume {volume:e})")]
    DegenerateElement { element: usize, volume: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("incomplete Cholesky failed after {retries} diagonal shifts")]
    FactorizationFailed { retries: usize },

    #[error("matrix is not positive definite (pivot {pivot}: {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("non-finite value in {solver} at iteration {iteration}")]
    NonFinite {
        solver: &'static str,
        iteration: usize,
    },

    #[error(
        "{context}: solver stopped after {iterations} iterations at relative residual {relres:e}"
    )]
    NotConverged {
        context: String,
        iterations: usize,
        relres: f64,
    },

    #[error("dense problem of size {size} exceeds the cap of {cap}")]
    DenseTooLarge { size: usize, cap: usize },

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// Prefixes a non-convergence context with the time step it occurred in.
    pub fn at_step(self, step: usize) -> Self {
        match self {
            Error::NotConverged {
                context,
                iterations,
                relres,
            } => Error::NotConverged {
                context: format!("time step {step}: {context}"),
                iterations,
                relres,
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
