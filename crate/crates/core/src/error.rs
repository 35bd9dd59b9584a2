use thiserror::Error;

/// Errors raised while validating inputs, evaluating the interval kernel or
/// reading/writing artifacts.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty data set")]
    EmptyData,
    #[error("free-start problems need at least two data points, got {0}")]
    InsufficientData(usize),
    #[error("abscissae must be strictly increasing (t[{index}] = {current} follows {previous})")]
    Unsorted {
        index: usize,
        previous: f64,
        current: f64,
    },
    #[error("data abscissa {0} collides with the pinned knot at t = 0 (must be > 0)")]
    PinnedCollision(f64),
    #[error("non-finite value in data point {0}")]
    NonFinite(usize),
    #[error("weight of data point {index} must be positive, got {weight}")]
    NonPositiveWeight { index: usize, weight: f64 },
    #[error("lambda must be positive and finite, got {0}")]
    InvalidLambda(f64),
    #[error("x_max must be positive and finite, got {0}")]
    InvalidUpperBound(f64),
    #[error("invalid interval parameters: {0}")]
    InvalidInterval(String),
    #[error("interval has zero rise but positive end slopes (vl = {vl}, vr = {vr}); no monotone curve exists")]
    InfeasibleInterval { vl: f64, vr: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("t = {t} outside curve domain [{start}, {end}]")]
    OutOfDomain { t: f64, start: f64, end: f64 },
    #[error("malformed spline document: {0}")]
    MalformedSpline(String),
    #[error("invalid histogram: {0}")]
    InvalidHistogram(String),
    #[error("degenerate sample set: {0}")]
    DegenerateSamples(String),
    #[error("oracle did not converge after {iterations} iterations (residual {residual:e})")]
    OracleNoConvergence { iterations: usize, residual: f64 },
    #[error("invalid oracle grid: {0}")]
    InvalidGrid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
