use thiserror::Error;

use crate::solvers::IterationRecord;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {left} cells vs {right} cells")]
    GridMismatch { left: usize, right: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empirical measure of an empty point set")]
    EmptySample,

    #[error("measure is not strictly positive ({zero_cells} cells with zero density)")]
    NonPositiveMeasure { zero_cells: usize },

    #[error("ergodic HJB did not converge: final residual {residual:.3e} after {} records", history.len())]
    HjbNonConvergence {
        residual: f64,
        history: Vec<IterationRecord>,
    },

    #[error("invariant measure iteration stagnated: {0}")]
    PowerIterationStagnation(String),

    #[error("relative value iteration did not converge after {iterations} sweeps (span {span:.3e})")]
    ValueIterationNonConvergence { iterations: usize, span: f64 },

    #[error("no fixed point found: {0}")]
    NoFixedPoint(String),

    #[error("penalization ladder exhausted at n = {last_n}: {reason}")]
    LadderExhausted { last_n: f64, reason: String },

    #[error("bracket violation: value(1) = {value_one} does not exceed target e = {target}")]
    BracketViolation { value_one: f64, target: f64 },

    #[error("bisection stalled after {iterations} steps with |value - e| = {gap:.3e}")]
    BisectionFailure { iterations: usize, gap: f64 },

    #[error("target payoff {target} outside [{e_min}, {e_max})")]
    TargetOutOfBand { target: f64, e_min: f64, e_max: f64 },

    #[error("no admissible delta above the floor {floor}")]
    NoAdmissibleDelta { floor: f64 },

    #[error("oracle inapplicable: {0}")]
    OracleInapplicable(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the error stems from the configuration rather than from a
    /// solver or invariant failure.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) | Error::Parse(_) | Error::InvalidGrid(_) | Error::TargetOutOfBand { .. } => true,
            Error::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
