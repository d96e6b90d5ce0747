use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("trajectory needs at least 2 samples, got {0}")]
    EmptyTrajectory(usize),
    #[error("timestamps decrease at sample {index}")]
    NonMonotoneTime { index: usize },
    #[error("vector field returned a non-finite value at t = {t}")]
    NonFiniteFlow { t: f64 },
    #[error("step size {dt:e} underflowed at t = {t}")]
    StepUnderflow { t: f64, dt: f64 },
    #[error("event condition does not change state on the bracket [{t_lo}, {t_hi}]")]
    NoSignChange { t_lo: f64, t_hi: f64 },
    #[error("more than {limit} events within one time unit ending at t = {t}")]
    ZenoGuard { t: f64, limit: f64 },
    #[error("gradients are undefined at the event time t = {0}")]
    AtEventTime(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid categorical distribution: {0}")]
    InvalidDistribution(String),
    #[error("standard deviation must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("loss became non-finite at iteration {iteration}")]
    DivergedLoss { iteration: usize },
    #[error("label sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("requested {k} clusters for {n} points")]
    TooManyClusters { k: usize, n: usize },
    #[error("interevent times must be positive, got {0}")]
    NonPositiveTime(f64),
    #[error("no event supervision available")]
    NoSupervision,
    #[error("mode {0} has no outgoing edges")]
    NoOutgoingEdges(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}:{line}: {message}")]
    Schema {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
