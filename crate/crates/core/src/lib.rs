//! hp Radau orthogonal collocation for constrained optimal control.
//!
//! The crate is organized around five building blocks:
//!
//! * [`radau`] — flipped Radau quadrature rules, the differentiation
//!   matrices `D` and `D‡`, their inverses, and norm diagnostics.
//! * [`ocp`] — control problem definitions (dynamics, costs, derivative
//!   oracles, box bounds) plus two builtin problems with closed-form
//!   solutions.
//! * [`transcription`] — the discretized first-order optimality system,
//!   its Jacobian, the multiplier/costate transform, interpolation of
//!   discrete solutions, and forward/backward linearized solves.
//! * [`solver`] — a semismooth Newton solver for the discrete system
//!   with an active-set treatment of box bounds.
//! * [`harness`] — convergence sweeps, rate fitting, table generation,
//!   an interpolation-error experiment, and CSV/JSON report emission.
//!
//! The `radau-hp` binary exposes the harness on the command line.

pub mod harness;
pub mod ocp;
pub mod radau;
pub mod solver;
pub mod transcription;

pub use ocp::{builtin_problem, AnalyticReference, Bounds, ControlProblem};
pub use radau::{build_scheme, scheme, PropertyReport, RadauScheme};
pub use solver::{solve, SolveOptions, SolveStats, SolveStatus};
pub use transcription::{DiscreteSolution, HpMesh, KktResidual};

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("symmetric eigenvalue iteration failed for dimension {0}")]
    EigenFailed(usize),
    #[error("degree must be at least 1")]
    DegreeTooSmall,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("unknown builtin problem `{0}`")]
    UnknownProblem(String),
    #[error("time {0} outside the problem horizon")]
    OutOfHorizon(f64),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("linear system is singular or too ill-conditioned")]
    SingularSystem,
    #[error("need at least {needed} samples above the accuracy floor, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
