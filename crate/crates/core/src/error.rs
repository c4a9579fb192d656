use thiserror::Error;

use crate::equilibrium::EquilibriumState;
use crate::grid::Point;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // geometry
    #[error("point {point:?} is not on the boundary (|d| = {distance:.3e} > {tolerance:.3e})")]
    NotOnBoundary { point: Point, distance: f64, tolerance: f64 },
    #[error("point {point:?} lies outside the regular tube (|d| = {distance:.3e} > {tube:.3e})")]
    OutsideTube { point: Point, distance: f64, tube: f64 },
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    // dynamics
    #[error("density is negative at node {node} ({value:.3e})")]
    NegativeDensity { node: usize, value: f64 },
    #[error("cutoff width {delta} exceeds the regular tube width {tube}")]
    DeltaTooLarge { delta: f64, tube: f64 },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    // hjb
    #[error("boundary cost too steep: lambda * k_max = {product:.4} >= 1")]
    CostTooSteep { product: f64 },
    #[error("CFL violated: k_max * dt = {step:.4e} > h = {h:.4e}")]
    CflViolation { step: f64, h: f64 },
    #[error("stationary sweep did not converge after {sweeps} sweeps (last change {change:.3e})")]
    NonConvergence { sweeps: usize, change: f64 },
    #[error("degenerate gradient at t = {t}, x = {x:?} (|grad| = {magnitude:.3e}, floor {floor:.3e})")]
    DegenerateGradient { t: f64, x: Point, magnitude: f64, floor: f64 },

    // trajectories
    #[error("start ({t0}, {x0:?}) lies on the ridge set")]
    DegenerateStart { t0: f64, x0: Point },
    #[error("no boundary reached from {x0:?} within {horizon} time units")]
    StallDetected { x0: Point, horizon: f64 },
    #[error("Pontryagin arc from {x0:?} did not exit within {horizon} time units")]
    NoExit { x0: Point, horizon: f64 },
    #[error("shooting failed from {x0:?}: best mismatch {mismatch:.3e}")]
    ShootingFailed { x0: Point, mismatch: f64 },
    #[error("trajectory has not exited")]
    NotExited,

    // transport
    #[error("mollification radius {epsilon} exceeds half the tube width {limit}")]
    EpsilonTooLarge { epsilon: f64, limit: f64 },
    #[error("Jacobian blow-up: |log J| = {log_jacobian:.2} at t = {t}")]
    JacobianBlowup { log_jacobian: f64, t: f64 },
    #[error("exponent p = {0} must exceed 1")]
    BadExponent(f64),

    // equilibrium
    #[error("initial density is not normalized (mass {mass:.6e})")]
    UnnormalizedDensity { mass: f64 },
    #[error("fixed point not reached after {iterations} iterations (exploitability {exploitability:.3e})")]
    MaxIterExceeded {
        iterations: usize,
        exploitability: f64,
        state: Box<EquilibriumState>,
    },
    #[error("particle {index}: {source}")]
    Particle {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    // analysis
    #[error("invalid time profile: {0}")]
    BadZeta(String),

    // cli
    #[error("invalid config at `{path}`: {message}")]
    ConfigInvalid { path: String, message: String },
    #[error("{context}: {source}")]
    Pipeline {
        context: String,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::ConfigInvalid {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Pipeline {
            context: context.into(),
            source: Box::new(self),
        }
    }
}
