use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("lambda out of domain: {0} not in [{1}, {2}]")]
    Domain(f64, f64, f64),

    #[error("singular least-squares fit: {0}")]
    SingularFit(String),

    #[error("integration failed: {0}")]
    Integration(String),

    #[error("target free energy {target} kJ/mol unattainable within depth bounds")]
    UnattainableTarget { target: f64 },

    #[error("integration diverged at step {step}: lambda = {lambda}")]
    Diverged { step: u64, lambda: f64 },

    #[error("no usable frames: {0}")]
    EmptyData(String),

    #[error("unidentifiable fit: {0}")]
    Unidentifiable(String),

    #[error("fit did not converge after {iterations} iterations (gradient norm {gradient_norm:e})")]
    NotConverged { iterations: usize, gradient_norm: f64 },

    #[error("degenerate regression target: {0}")]
    DegenerateTarget(String),

    #[error("undefined estimate: {0}")]
    Undefined(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
