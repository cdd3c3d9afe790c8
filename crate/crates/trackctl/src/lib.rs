//! Numerical toolkit for output-tracking control of finite-dimensional
//! linear systems `x' = Ax + Bu`: given an output row `E` and a target
//! `f(t)`, synthesize controls with `Ex(t) = f(t)` on `[0, T]`, solve the
//! penalized least-squares alternative, and probe the discrete
//! control-to-output operator.
//!
//! Modules:
//! - [`linalg`]: matrix exponential, characteristic polynomial, Kalman rank.
//! - [`model`]: plants, time grids, analytic targets, sampled signals.
//! - [`brunovsky`]: controllable canonical form of scalar-input pairs.
//! - [`tracker`]: exact tracking synthesis through the canonical cascade.
//! - [`operators`]: discrete control-to-output operator, adjoint, Gramian,
//!   spectrum diagnostics and the modal (moment) control formula.
//! - [`hum`]: penalized minimum-norm solver via conjugate gradients.
//! - [`pde`]: semi-discrete heat/wave chains and their explicit cascades.
//! - [`cli`]: command-line front end (JSON problems in, CSV out).

pub mod brunovsky;
pub mod cli;
pub mod error;
pub mod hum;
pub mod linalg;
pub mod model;
pub mod operators;
pub mod pde;
pub mod tracker;

pub use error::{Error, Result};
