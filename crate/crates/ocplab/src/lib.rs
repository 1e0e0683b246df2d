//! Finite element experiments on the decay of perturbations in linear-quadratic
//! elliptic and parabolic optimal control problems.
//!
//! The pipeline is: build a structured mesh ([`mesh`]), assemble P1 operators
//! ([`assembly`]), form and solve the optimality system ([`elliptic`],
//! [`parabolic`]), then measure norms and decay rates ([`analysis`],
//! [`scaling`]). Linear algebra lives in [`sparse`].

pub mod analysis;
pub mod assembly;
pub mod elliptic;
pub mod error;
pub mod experiments;
pub mod mesh;
pub mod parabolic;
pub mod scaling;
pub mod sparse;

pub use error::{Error, Result};
