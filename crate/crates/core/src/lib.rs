//! Multi-contact rigid body stepping with a closed-form contact model, a QP
//! baseline, and a contact-implicit model predictive controller.
//!
//! The crate is organized along the data flow of one simulation step:
//! [`collision`] produces contact points from shape poses, [`assembly`] turns
//! them into stacked contact Jacobians and a linearized system, [`steppers`]
//! advances velocities (closed-form, damped closed-form, or QP), [`se3`]
//! integrates poses, [`mpc`] plans controls through the smoothed closed form,
//! and [`scenarios`] wires named scenes, tasks, and trial loops consumed by
//! the `cfstep` binary via [`cli`].

pub mod assembly;
pub mod cli;
pub mod collision;
pub mod lcp;
pub mod mpc;
pub mod qp;
pub mod scenarios;
pub mod se3;
pub mod steppers;
pub mod validate;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument violated a documented precondition (non-unit quaternion,
    /// non-positive step size, negative friction, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// Two inputs that must agree in dimension did not.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    /// A shape pair with no narrow-phase routine.
    #[error("unsupported geometry pair: {0}")]
    UnsupportedGeometry(String),
    /// A numeric solver failed to converge or was handed an unsolvable system.
    #[error("solver failure: {0}")]
    SolverFailure(String),
    /// Configuration file or command line could not be interpreted.
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
