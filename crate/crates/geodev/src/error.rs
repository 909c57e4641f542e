//! Error type shared by all modules.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A point left the validity region of a chart (or a finite-difference
    /// stencil around it did).
    #[error("point {point:?} escaped the chart domain")]
    DomainEscape { point: Vec<f64> },

    /// The adaptive integrator could not make progress. This is how
    /// finite-time blow-up surfaces: the generalized Jacobi equation is
    /// nonlinear and only locally solvable, so callers must handle it.
    #[error("step size underflow at s = {s}")]
    StepUnderflow { s: f64 },

    #[error("non-finite state at s = {s}")]
    NonFiniteState { s: f64 },

    #[error("integration exceeded {0} steps")]
    TooManySteps(usize),

    #[error("metric not invertible at {point:?}")]
    SingularMetric { point: Vec<f64> },

    #[error("unknown geometry `{0}`")]
    UnknownGeometry(String),

    #[error("jacobian singular at {point:?}")]
    SingularJacobian { point: Vec<f64> },

    #[error("inversion failed near {point:?}: {reason}")]
    InversionFailed { point: Vec<f64>, reason: String },

    #[error("trajectories do not share an s-grid")]
    GridMismatch,

    #[error("frame vectors do not complement the tangent direction")]
    DegenerateFrame,

    #[error("no injective box found down to rho = {rho:.3e}")]
    InjectivityFailure { rho: f64 },

    #[error("map hessian does not vanish at the anchor point (sup {norm:.3e})")]
    HessianNotZero { norm: f64 },

    #[error("curve is not a graph over the axis parameter")]
    NotGraphLike,

    #[error("vectors are not orthonormal: {0}")]
    NonOrthonormalInput(String),

    #[error("charts do not overlap on enough sample points")]
    InsufficientOverlap,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
