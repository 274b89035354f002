use thiserror::Error;

/// Errors produced by the solvers, barrier certifiers and scenario builders.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("degenerate class: {0}")]
    DegenerateClass(String),

    #[error("regime error: {0}")]
    Regime(String),

    #[error("profile audit failed: {0}")]
    ProfileAudit(String),

    #[error("non-finite state at x = {x} (t = {t})")]
    NonFinite { t: f64, x: f64 },

    #[error("degenerate stencil at node {index}")]
    DegenerateStencil { index: usize },

    #[error("self-intersection between segments {first} and {second}")]
    SelfIntersection { first: usize, second: usize },

    #[error("curve touches the strip wall x = {wall} at node {index}")]
    WallContact { index: usize, wall: f64 },

    #[error("time step {dt} exceeds the stability limit {limit}")]
    CflViolation { dt: f64, limit: f64 },

    #[error("critical point of the level function near ({x}, {y})")]
    CriticalPoint { x: f64, y: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("barrier expired at t = {t} (lifetime {lifetime})")]
    BarrierExpired { t: f64, lifetime: f64 },

    #[error("hypothesis window violated at theta = {theta:?}")]
    HypothesisViolation { theta: Vec<f64> },

    #[error("window failure: a_gap = {requested} too large, largest admissible is {largest}")]
    WindowFailure { requested: f64, largest: f64 },

    #[error("construction infeasible: {0}")]
    Infeasible(String),

    #[error("integration failed: {0}")]
    Integration(String),

    #[error("io: {0}")]
    Io(String),

    #[error("config: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
