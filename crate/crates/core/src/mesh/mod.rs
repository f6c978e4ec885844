//! Graded sector meshes: a shape-regular 2D triangulation of a circular
//! sector, refined towards the concave corner, extruded into a conforming
//! tetrahedral tensor-product mesh.

mod mesh2d;
mod quality;
mod tetmesh;
pub mod vtk;

pub use mesh2d::{build_sector_mesh_2d, BoundaryKind, Mesh2D};
pub use quality::{mesh_quality, MeshQualityReport};
pub use tetmesh::{extrude_to_tets, AxisTouch, Facet, TetMesh};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of the graded mesh family on the sector `{0 < r < 1, 0 < phi < omega}`
/// extruded to `z in (0, z_len)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradingConfig {
    /// Target mesh size away from the singular edge.
    pub h: f64,
    /// Grading parameter in (0, 1]; `mu = 1` is quasi-uniform.
    pub mu: f64,
    /// Radius of the refinement zone around the corner.
    pub big_r: f64,
    /// Opening angle of the sector, in (pi, 2*pi).
    pub omega: f64,
    /// Extrusion length in the z-direction.
    pub z_len: f64,
    /// Constant `C` in the size law `h_D <= C * bound(r_D)`.
    pub size_constant: f64,
    /// Refinement budget for the 2D generator.
    pub max_triangles_2d: usize,
}

impl GradingConfig {
    pub fn new(h: f64, mu: f64) -> Self {
        Self {
            h,
            mu,
            big_r: 1.0,
            omega: 1.5 * std::f64::consts::PI,
            z_len: 1.0,
            size_constant: 2.0,
            max_triangles_2d: 400_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pi = std::f64::consts::PI;
        if !(self.h > 0.0 && self.h <= 1.0) {
            return Err(Error::InvalidConfig(format!("h = {} not in (0, 1]", self.h)));
        }
        if !(self.mu > 0.0 && self.mu <= 1.0) {
            return Err(Error::InvalidConfig(format!("mu = {} not in (0, 1]", self.mu)));
        }
        if !(self.big_r > 0.0 && self.big_r <= 1.0) {
            return Err(Error::InvalidConfig(format!("R = {} not in (0, 1]", self.big_r)));
        }
        if !(self.omega > pi && self.omega < 2.0 * pi) {
            return Err(Error::InvalidConfig(format!(
                "omega = {} not in (pi, 2*pi)",
                self.omega
            )));
        }
        if !(self.z_len > 0.0) {
            return Err(Error::InvalidConfig(format!("z_len = {} not positive", self.z_len)));
        }
        if !(self.size_constant >= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "size constant C = {} must be >= 1",
                self.size_constant
            )));
        }
        Ok(())
    }

    /// The three-case target size at distance `r` from the corner
    /// (without the constant `C`).
    pub fn size_bound(&self, r: f64) -> f64 {
        if r <= 0.0 {
            self.h.powf(1.0 / self.mu)
        } else if r < self.big_r {
            self.h * r.powf(1.0 - self.mu)
        } else {
            self.h
        }
    }

    /// Number of uniform extrusion layers.
    pub fn n_layers(&self) -> usize {
        (self.z_len / self.h).ceil().max(1.0) as usize
    }
}

/// Convenience: graded tetrahedral mesh straight from a config.
pub fn build_tet_mesh(cfg: &GradingConfig) -> Result<TetMesh> {
    let m2d = build_sector_mesh_2d(cfg)?;
    extrude_to_tets(&m2d, cfg)
}
