use std::path::PathBuf;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument fell outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Two vectors or tensor lists that must agree in shape do not.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// The requested budget is at or above the configuration's head-room.
    #[error(
        "budget infeasible: epsilon {epsilon} nats is not below epsilon_max {epsilon_max} nats"
    )]
    BudgetInfeasible { epsilon: f64, epsilon_max: f64 },

    /// Every invalid field of an experiment configuration.
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("malformed file {}: {msg}", .path.display())]
    Parse { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
