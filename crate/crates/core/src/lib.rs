//! Nonconforming finite elements for the incompressible Stokes equations on
//! prismatic domains with a concave edge.
//!
//! The crate builds anisotropically graded tetrahedral tensor-product meshes
//! of a sector cross-section, discretises the Stokes problem with the
//! Crouzeix-Raviart / P0 pair, and optionally makes the method pressure-robust
//! by reconstructing velocity test functions into H(div)-conforming
//! Raviart-Thomas or Brezzi-Douglas-Marini fields. A study harness measures
//! errors against closed-form singular solutions and reports experimental
//! convergence orders.

pub mod error;
pub mod exact;
pub mod fem;
pub mod mesh;
pub mod reconstruction;
pub mod solver;
pub mod sparse;
pub mod study;
pub mod verify;

pub use error::{Error, Result};

/// Crate version, surfaced in run manifests and the C API.
pub fn version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}
