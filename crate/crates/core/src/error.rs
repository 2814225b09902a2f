use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {variable} at t = {t}")]
    NonFinite { t: f64, variable: String },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("scenario parse error: {0}")]
    Parse(String),

    #[error("channel arrival {arrival} precedes previous arrival {previous}; delay profile violates Tdot < 1")]
    NonMonotoneArrival { arrival: f64, previous: f64 },

    #[error("LMI needs at least two slaves, got N = {0}")]
    TooFewSlaves(usize),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    Asymmetric(f64),

    #[error("decision variable {0} is not positive definite")]
    NotPositiveDefinite(&'static str),

    #[error("LMI is structurally infeasible: {0}")]
    StructurallyInfeasible(String),

    #[error("insufficient history: need {needed} s, have {available} s")]
    InsufficientHistory { needed: f64, available: f64 },

    #[error("Zeno bound needs a positive derivative bound, got {0}")]
    NonPositiveBound(f64),

    #[error("unknown force profile kind `{0}`")]
    UnknownForceKind(String),

    #[error("trace error: {0}")]
    Trace(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
