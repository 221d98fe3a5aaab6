use thiserror::Error;

/// Errors raised by the propagation, integration and control layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("degenerate projection direction (g = 0)")]
    DegenerateDirection,

    #[error("degenerate projection: projected variance {var} below floor {floor}")]
    DegenerateProjection { var: f64, floor: f64 },

    #[error("model evaluation produced a non-finite value: {0}")]
    ModelEvaluation(String),

    #[error("covariance is not positive semidefinite (smallest eigenvalue {min_eig:e})")]
    NotPsd { min_eig: f64 },

    #[error("regularity violation: grad psi vanishes on the switching surface at t = {t}")]
    RegularityViolation { t: f64 },

    #[error("event budget exhausted after {0} switches")]
    EventBudget(usize),

    #[error("degenerate sliding mode: |grad psi^T (f1 - f2)| = {0:e}")]
    DegenerateSliding(f64),

    #[error("tangential contact: jump-matrix denominator {0:e} vanishes")]
    TangentialContact(f64),

    #[error("integration diverged; last valid time {last_valid_t}")]
    Divergence { last_valid_t: f64 },

    #[error("rollout diverged at stage {stage}")]
    StageDivergence { stage: usize },

    #[error("sample {row} failed: {source}")]
    Row {
        row: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
