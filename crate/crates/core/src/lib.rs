//! Adaptive atomistic/continuum coupling on the triangular lattice.
//!
//! The crate couples a nearest-neighbour EAM lattice model with Cauchy-Born
//! finite elements through geometric reconstruction at the interface, and
//! drives mesh refinement with residual based error estimators.

pub mod adaptive;
pub mod atomistic;
pub mod coupling;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod geometry;
pub mod kinematics;
pub mod lattice;
pub mod mesh;
pub mod potential;
pub mod predictor;
pub mod solver;
pub mod sparse;
pub mod stats;
pub mod stress;
pub mod transfer;
pub mod verify;

pub use error::{Error, Result};
pub use lattice::{Mat2, Vec2};
