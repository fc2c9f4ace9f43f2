use thiserror::Error;

/// Errors raised across the laboratory.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid multi-index {index:?}: {reason}")]
    InvalidIndex { index: Vec<usize>, reason: String },

    #[error("empty index set: {0}")]
    EmptySet(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("state diverged at step {step}")]
    Divergence { step: usize },

    #[error("degenerate weights: {0}")]
    DegenerateWeights(String),

    #[error("particle weights collapsed at step {step} (effective sample size {ess:.3})")]
    WeightCollapse { step: usize, ess: f64 },

    #[error("series diverges: {0}")]
    DivergentSeries(String),

    #[error("refinement did not converge within depth {depth} (last change {change:e})")]
    NoConvergence { depth: usize, change: f64 },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("vacuous fit: {0}")]
    VacuousFit(String),

    #[error("boundary-layer contamination: {0}")]
    BoundaryContamination(String),

    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl LabError {
    /// True for failures caused by a numerical guard rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            LabError::Divergence { .. }
                | LabError::DegenerateWeights(_)
                | LabError::WeightCollapse { .. }
                | LabError::DivergentSeries(_)
                | LabError::NoConvergence { .. }
                | LabError::DegenerateFit(_)
                | LabError::VacuousFit(_)
                | LabError::BoundaryContamination(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
