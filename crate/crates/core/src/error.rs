use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in coupling layer {layer}")]
    NonFinite { layer: usize },

    #[error("degenerate importance weights: {0}")]
    DegenerateWeights(String),

    #[error("annealing schedule stalled at beta = {beta:e} ({reason})")]
    ScheduleStall { beta: f64, reason: String },

    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    #[error("insufficient thermodynamic-integration ladder: {surviving} point(s) survive the cutoff")]
    InsufficientLadder { surviving: usize },

    #[error("ODE solver failed: {0}")]
    Solver(#[from] crate::target::ode::SolverFailure),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
