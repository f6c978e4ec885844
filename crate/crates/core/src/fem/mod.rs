//! Crouzeix-Raviart / P0 discretisation: basis, dof management, quadrature
//! and assembly of the discrete Stokes forms.

pub mod assembly;
pub mod basis;
pub mod dofmap;
pub mod quadrature;

pub use assembly::{
    assemble_a, assemble_a_scalar, assemble_b, assemble_rhs, interpolate_cr, rhs_quadrature_check,
};
pub use basis::TetGeom;
pub use dofmap::DofMap;
pub use quadrature::{QuadratureConfig, TetRule, TriRule};

use serde::{Deserialize, Serialize};

/// Discretisation variant: the standard method tests the load with the CR
/// basis, the modified methods with its H(div)-conforming reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Cr,
    CrRt,
    CrBdm,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Cr => "CR",
            Method::CrRt => "CR-RT",
            Method::CrBdm => "CR-BDM",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cr" => Ok(Method::Cr),
            "cr-rt" | "crrt" | "rt" => Ok(Method::CrRt),
            "cr-bdm" | "crbdm" | "bdm" => Ok(Method::CrBdm),
            other => Err(format!("unknown method '{}'", other)),
        }
    }
}

/// CR velocity coefficients: 3 components per facet, `dof = 3 * facet + k`,
/// the value of component `k` at the facet barycenter.
#[derive(Debug, Clone)]
pub struct VelocityField {
    pub coeffs: Vec<f64>,
}

impl VelocityField {
    pub fn zeros(n_facets: usize) -> Self {
        Self {
            coeffs: vec![0.0; 3 * n_facets],
        }
    }

    pub fn n_facets(&self) -> usize {
        self.coeffs.len() / 3
    }

    pub fn facet_value(&self, facet: usize) -> nalgebra::Vector3<f64> {
        nalgebra::Vector3::new(
            self.coeffs[3 * facet],
            self.coeffs[3 * facet + 1],
            self.coeffs[3 * facet + 2],
        )
    }

    pub fn set_facet_value(&mut self, facet: usize, v: &nalgebra::Vector3<f64>) {
        self.coeffs[3 * facet] = v.x;
        self.coeffs[3 * facet + 1] = v.y;
        self.coeffs[3 * facet + 2] = v.z;
    }
}

/// Piecewise-constant pressure coefficients, one per tet.
#[derive(Debug, Clone)]
pub struct PressureField {
    pub coeffs: Vec<f64>,
}

impl PressureField {
    pub fn zeros(n_tets: usize) -> Self {
        Self {
            coeffs: vec![0.0; n_tets],
        }
    }
}
