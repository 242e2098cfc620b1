use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("atom list is empty")]
    EmptyMeasure,

    #[error("invalid atom (value {value}, weight {weight}): {reason}")]
    InvalidAtom {
        value: f64,
        weight: f64,
        reason: &'static str,
    },

    #[error("total weight {0} is not positive")]
    ZeroTotalWeight(f64),

    #[error("dimensions must be >= 1, got n = {n}, N = {big_n}")]
    InvalidDimensions { n: usize, big_n: usize },

    #[error("singular kernel: |1 + t*alpha| = {dist:.3e} at atom t = {atom}")]
    SingularKernel { atom: f64, dist: f64 },

    #[error("spectral point requires Im z > 0, got eta = {0}")]
    NonPositiveEta(f64),

    #[error(
        "self-consistent iteration did not converge: residual {residual:.3e} \
         after {iterations} iterations at eta = {eta:.3e}"
    )]
    Convergence {
        residual: f64,
        iterations: usize,
        eta: f64,
        m1c: (f64, f64),
        m2c: (f64, f64),
    },

    #[error("no sign change of f on bracket [{lo}, {hi}]")]
    NoBracket { lo: f64, hi: f64 },

    #[error("edge search failed: {0}")]
    EdgeSearch(String),

    #[error("degenerate edge: {0}")]
    DegenerateEdge(String),

    #[error("cumulative spectral mass {available:.6e} cannot reach quantile {requested:.6e}")]
    QuantileExhausted { requested: f64, available: f64 },

    #[error("invalid entry law: {0}")]
    InvalidLaw(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("SVD did not converge (replica seed {seed})")]
    SvdFailure { seed: u64 },

    #[error("batch aborted: {failed} of {reps} replicas failed")]
    BatchFailed { failed: usize, reps: usize },

    #[error("sample does not retain singular vectors")]
    VectorsNotRetained,

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("singular deterministic limit: |1 + m2c*sigma| = {0:.3e}")]
    SingularPi(f64),

    #[error("empty sample")]
    EmptySample,

    #[error("singular null covariance: {0}")]
    SingularCovariance(String),

    #[error("invalid model document: {0}")]
    InvalidModel(String),

    #[error("model fails structural validation: {0}")]
    Validation(String),

    #[error("invalid table asset: {0}")]
    InvalidTable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
