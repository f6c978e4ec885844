//! Reconstruction of Crouzeix-Raviart velocity fields into H(div)-conforming
//! Raviart-Thomas (RT0) or Brezzi-Douglas-Marini (BDM1) fields.
//!
//! Both operators keep the elementwise divergence: facet mean fluxes of the
//! reconstruction agree with those of the CR field, so by the divergence
//! theorem `div(I_h v) = div_h v` on every tet. Interior facet dofs are
//! shared (single-valued normal traces); on boundary facets the operators use
//! the single trace of the CR field.

use nalgebra::{Matrix3, Point3, SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::quadrature::{tet_rule, tri_rule, TriRule};
use crate::fem::{TetGeom, VelocityField};
use crate::mesh::TetMesh;

/// Reconstruction target space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HDivKind {
    Rt0,
    Bdm1,
}

/// H(div)-conforming field described by per-facet normal moments.
///
/// RT0 stores one dof per facet, the flux `int_F v . n_F`. BDM1 stores three:
/// moments of `v . n_F` against the facet basis `[1, mu_1 - 1/3, mu_2 - 1/3]`
/// built on the sorted global vertex triple of the facet.
#[derive(Debug, Clone)]
pub struct HDivField {
    pub kind: HDivKind,
    pub dofs: Vec<f64>,
}

/// Facet polynomial basis `q = [1, mu_1 - 1/3, mu_2 - 1/3]` at a point on the
/// facet, `mu` being barycentric coordinates of the sorted global triple.
pub(crate) fn facet_q_basis(mesh: &TetMesh, facet: usize, x: &Point3<f64>) -> [f64; 3] {
    let f = &mesh.facets[facet];
    let (a, b, c) = (
        mesh.vertices[f.verts[0]],
        mesh.vertices[f.verts[1]],
        mesh.vertices[f.verts[2]],
    );
    let n = f.normal;
    // Ratios of signed sub-triangle areas; the normal's sign cancels.
    let full = (b - a).cross(&(c - a)).dot(&n);
    let m1 = (x - a).cross(&(c - a)).dot(&n) / full;
    let m2 = (b - a).cross(&(x - a)).dot(&n) / full;
    [1.0, m1 - 1.0 / 3.0, m2 - 1.0 / 3.0]
}

/// Degree used for all facet-moment quadrature (P1 x P1 integrands).
pub(crate) const FACET_MOMENT_DEGREE: usize = 3;

pub(crate) fn facet_quad_points(
    mesh: &TetMesh,
    facet: usize,
    rule: &TriRule,
) -> Vec<(Point3<f64>, f64)> {
    let f = &mesh.facets[facet];
    let (a, b, c) = (
        mesh.vertices[f.verts[0]].coords,
        mesh.vertices[f.verts[1]].coords,
        mesh.vertices[f.verts[2]].coords,
    );
    rule.bary
        .iter()
        .zip(&rule.weights)
        .map(|(bary, &w)| {
            (
                Point3::from(a * bary[0] + b * bary[1] + c * bary[2]),
                w * f.area,
            )
        })
        .collect()
}

/// RT0 interpolation: the facet flux of a CR field is well defined because
/// both traces share the facet mean.
pub fn rt_interpolate(mesh: &TetMesh, v: &VelocityField) -> HDivField {
    let dofs = (0..mesh.n_facets())
        .map(|f| {
            let facet = &mesh.facets[f];
            facet.area * facet.normal.dot(&v.facet_value(f))
        })
        .collect();
    HDivField {
        kind: HDivKind::Rt0,
        dofs,
    }
}

/// BDM1 interpolation: three moments per facet of the averaged (interior) or
/// single (boundary) normal trace.
pub fn bdm_interpolate(mesh: &TetMesh, v: &VelocityField) -> Result<HDivField> {
    let rule = tri_rule(FACET_MOMENT_DEGREE);
    let mut dofs = vec![0.0; 3 * mesh.n_facets()];
    for f in 0..mesh.n_facets() {
        let facet = &mesh.facets[f];
        let n = facet.normal;
        let owners: Vec<usize> = match facet.owners.1 {
            Some(t1) => vec![facet.owners.0, t1],
            None => vec![facet.owners.0],
        };
        let weight = 1.0 / owners.len() as f64;
        for &t in &owners {
            let geom = TetGeom::for_tet(mesh, t)?;
            let local = mesh.tet_facets[t];
            for (x, w) in facet_quad_points(mesh, f, &rule) {
                let theta = geom.cr_basis(&x);
                let mut trace = Vector3::zeros();
                for i in 0..4 {
                    trace += theta[i] * v.facet_value(local[i]);
                }
                let q = facet_q_basis(mesh, f, &x);
                let vn = trace.dot(&n);
                for m in 0..3 {
                    dofs[3 * f + m] += weight * w * vn * q[m];
                }
            }
        }
    }
    Ok(HDivField {
        kind: HDivKind::Bdm1,
        dofs,
    })
}

/// Vertex-value coefficients of the twelve local BDM1 dual basis fields on a
/// tet: `vertex_coeffs[3 i + m][alpha]` is the vector value at local vertex
/// `alpha` of the field whose only nonzero dof is moment `m` on the facet
/// opposite vertex `i`.
#[derive(Debug, Clone)]
pub struct BdmLocal {
    pub vertex_coeffs: [[Vector3<f64>; 4]; 12],
}

impl BdmLocal {
    pub fn eval(&self, geom: &TetGeom, dof: usize, x: &Point3<f64>) -> Vector3<f64> {
        let lambda = geom.barycentric(x);
        let c = &self.vertex_coeffs[dof];
        c[0] * lambda[0] + c[1] * lambda[1] + c[2] * lambda[2] + c[3] * lambda[3]
    }

    pub fn divergence(&self, geom: &TetGeom, dof: usize) -> f64 {
        let c = &self.vertex_coeffs[dof];
        (0..4).map(|a| c[a].dot(&geom.grad_lambda[a])).sum()
    }
}

/// Builds the local BDM1 dual basis by inverting the 12 x 12 moment matrix
/// `D[(j, n), (alpha, comp)] = n_Fj[comp] * int_Fj lambda_alpha q_n`.
pub fn bdm_local(mesh: &TetMesh, t: usize, geom: &TetGeom) -> Result<BdmLocal> {
    let rule = tri_rule(FACET_MOMENT_DEGREE);
    let mut d = SMatrix::<f64, 12, 12>::zeros();
    for j in 0..4 {
        let facet = mesh.tet_facets[t][j];
        let n = mesh.facets[facet].normal;
        for (x, w) in facet_quad_points(mesh, facet, &rule) {
            let lambda = geom.barycentric(&x);
            let q = facet_q_basis(mesh, facet, &x);
            for nmom in 0..3 {
                for alpha in 0..4 {
                    for comp in 0..3 {
                        d[(3 * j + nmom, 3 * alpha + comp)] +=
                            w * q[nmom] * lambda[alpha] * n[comp];
                    }
                }
            }
        }
    }
    let inv = d
        .try_inverse()
        .ok_or_else(|| Error::DegenerateElement("BDM moment matrix is singular".into()))?;
    let mut vertex_coeffs = [[Vector3::zeros(); 4]; 12];
    for dof in 0..12 {
        for alpha in 0..4 {
            vertex_coeffs[dof][alpha] = Vector3::new(
                inv[(3 * alpha, dof)],
                inv[(3 * alpha + 1, dof)],
                inv[(3 * alpha + 2, dof)],
            );
        }
    }
    Ok(BdmLocal { vertex_coeffs })
}

impl HDivField {
    /// Evaluates the field inside tet `t`.
    pub fn eval(
        &self,
        mesh: &TetMesh,
        t: usize,
        geom: &TetGeom,
        x: &Point3<f64>,
    ) -> Result<Vector3<f64>> {
        match self.kind {
            HDivKind::Rt0 => {
                let mut val = Vector3::zeros();
                for i in 0..4 {
                    let f = mesh.tet_facets[t][i];
                    let sign = if mesh.facet_outward(t, f) { 1.0 } else { -1.0 };
                    val += self.dofs[f] * sign * (x - geom.verts[i]) / (3.0 * geom.volume);
                }
                Ok(val)
            }
            HDivKind::Bdm1 => {
                let local = bdm_local(mesh, t, geom)?;
                let mut val = Vector3::zeros();
                for i in 0..4 {
                    let f = mesh.tet_facets[t][i];
                    for m in 0..3 {
                        val += self.dofs[3 * f + m] * local.eval(geom, 3 * i + m, x);
                    }
                }
                Ok(val)
            }
        }
    }

    /// Elementwise (constant) divergence on tet `t`.
    pub fn divergence(&self, mesh: &TetMesh, t: usize, geom: &TetGeom) -> Result<f64> {
        match self.kind {
            HDivKind::Rt0 => {
                let mut div = 0.0;
                for i in 0..4 {
                    let f = mesh.tet_facets[t][i];
                    let sign = if mesh.facet_outward(t, f) { 1.0 } else { -1.0 };
                    div += self.dofs[f] * sign;
                }
                Ok(div / geom.volume)
            }
            HDivKind::Bdm1 => {
                let local = bdm_local(mesh, t, geom)?;
                let mut div = 0.0;
                for i in 0..4 {
                    let f = mesh.tet_facets[t][i];
                    for m in 0..3 {
                        div += self.dofs[3 * f + m] * local.divergence(geom, 3 * i + m);
                    }
                }
                Ok(div)
            }
        }
    }

    /// Net flux through a facet in the direction of the global facet normal.
    pub fn facet_flux(&self, facet: usize) -> f64 {
        match self.kind {
            HDivKind::Rt0 => self.dofs[facet],
            // q_0 = 1, so the first moment is the net flux.
            HDivKind::Bdm1 => self.dofs[3 * facet],
        }
    }
}

/// Interpolates a CR field into the requested space.
pub fn interpolate(mesh: &TetMesh, v: &VelocityField, kind: HDivKind) -> Result<HDivField> {
    match kind {
        HDivKind::Rt0 => Ok(rt_interpolate(mesh, v)),
        HDivKind::Bdm1 => bdm_interpolate(mesh, v),
    }
}

/// Elementwise divergence of a CR field on tet `t`.
pub fn cr_divergence(mesh: &TetMesh, v: &VelocityField, t: usize, geom: &TetGeom) -> f64 {
    let grads = geom.cr_gradients();
    let mut div = 0.0;
    for i in 0..4 {
        div += v.facet_value(mesh.tet_facets[t][i]).dot(&grads[i]);
    }
    div
}

/// Ratio `||v - I_h v||_0 / (h ||grad_h v||_0)` for one CR field.
pub fn reconstruction_distance(
    mesh: &TetMesh,
    v: &VelocityField,
    kind: HDivKind,
    h: f64,
) -> Result<f64> {
    let field = interpolate(mesh, v, kind)?;
    // The integrand (v - I_h v)^2 is piecewise quadratic.
    let rule = tet_rule(4);
    let mut num = 0.0;
    let mut den = 0.0;
    for t in 0..mesh.n_tets() {
        let geom = TetGeom::for_tet(mesh, t)?;
        let grads = geom.cr_gradients();
        let local = mesh.tet_facets[t];
        let mut g = Matrix3::<f64>::zeros();
        for i in 0..4 {
            let coeff = v.facet_value(local[i]);
            for k in 0..3 {
                for l in 0..3 {
                    g[(k, l)] += coeff[k] * grads[i][l];
                }
            }
        }
        den += geom.volume * g.norm_squared();
        for (bary, &w) in rule.bary.iter().zip(&rule.weights) {
            let x = Point3::from(
                geom.verts[0].coords * bary[0]
                    + geom.verts[1].coords * bary[1]
                    + geom.verts[2].coords * bary[2]
                    + geom.verts[3].coords * bary[3],
            );
            let theta = geom.cr_basis(&x);
            let mut vx = Vector3::zeros();
            for i in 0..4 {
                vx += theta[i] * v.facet_value(local[i]);
            }
            let rx = field.eval(mesh, t, &geom, &x)?;
            num += w * geom.volume * (vx - rx).norm_squared();
        }
    }
    // Constant fields have a vanishing broken gradient up to roundoff; their
    // ratio is 0/0 and reported as zero.
    let v_scale = v.coeffs.iter().fold(0.0f64, |m, &c| m.max(c.abs()));
    if den.sqrt() <= 1e-13 * v_scale.max(1e-300) {
        return Ok(0.0);
    }
    Ok(num.sqrt() / (h * den.sqrt()))
}

/// Empirical audit of the interpolation-error constant: the max ratio over
/// random CR fields, per mesh level.
pub fn measure_reconstruction_distance(
    meshes: &[(&TetMesh, f64)],
    kind: HDivKind,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    use rand::{Rng, SeedableRng};
    let mut out = Vec::with_capacity(meshes.len());
    for (mesh, h) in meshes {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for _ in 0..n_samples {
            let mut v = VelocityField::zeros(mesh.n_facets());
            for c in v.coeffs.iter_mut() {
                *c = rng.gen_range(-1.0..1.0);
            }
            worst = worst.max(reconstruction_distance(mesh, &v, kind, *h)?);
        }
        out.push(worst);
    }
    Ok(out)
}
