use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("invalid config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("velocity direction must be a unit vector (norm {0})")]
    NonUnitDirection(f64),

    #[error("intruder has no surface elements")]
    EmptyElements,

    #[error("invalid plate element: {0}")]
    InvalidElement(String),

    #[error("invalid path problem: {0}")]
    InvalidProblem(String),

    #[error("objective became non-finite at iteration {iteration}")]
    NonFiniteObjective { iteration: usize },

    #[error("pose unreachable: {0}")]
    Unreachable(String),

    #[error("invalid demonstration: {0}")]
    InvalidDemo(String),

    #[error("infeasible demonstration script: {0}")]
    InfeasibleScript(String),

    #[error("invalid coach input: {0}")]
    InvalidCoachInput(String),

    #[error("action set is empty after clipping to bounds")]
    EmptyActionSet,

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}
