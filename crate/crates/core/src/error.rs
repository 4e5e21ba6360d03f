use thiserror::Error;

/// Errors surfaced by every stage of the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid potential: {0}")]
    InvalidPotential(String),

    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("internal consistency check failed: {0}")]
    InternalConsistency(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "resonance at step {step}: k={k:?}, i={i}, j={j}, {kind} divisor {divisor:.3e} below threshold {threshold:.3e}"
    )]
    Resonance { step: usize, k: Vec<i32>, i: usize, j: usize, kind: String, divisor: f64, threshold: f64 },

    #[error("step-size failure at step {step}: {reason}; try a smaller epsilon")]
    StepSize { step: usize, reason: String },

    #[error("self-adjointness violated: {0}")]
    SelfAdjointness(String),

    #[error("bad input: {0}")]
    Input(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Name of the module that raised the error, for run summaries.
    pub fn module(&self) -> &'static str {
        match self {
            Error::InvalidPotential(_) => "potential",
            Error::Resource(_) => "potential",
            Error::Dimension(_) => "galerkin",
            Error::Schedule(_) => "smoothing",
            Error::Resonance { .. } => "resonance",
            Error::StepSize { .. } | Error::SelfAdjointness(_) => "kam_engine",
            Error::InternalConsistency(_) => "kam_engine",
            Error::InvalidParameter(_) => "kam_engine",
            Error::Input(_) => "verify",
            Error::Config(_) | Error::Io(_) | Error::Json(_) => "cli",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
