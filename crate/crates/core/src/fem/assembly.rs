//! Assembly of the discrete Stokes system.
//!
//! The viscous block and the divergence constraint are integrated exactly
//! (piecewise-constant integrands). The load vector is integrated with the
//! singularity-aware quadrature; for the modified methods the test functions
//! are reconstructed on the fly into RT0 or BDM1 fields that vanish on the
//! boundary, which is what makes the methods pressure-robust.

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;

use crate::error::Result;
use crate::fem::quadrature::{integrate_tet, tet_rule, tri_rule, QuadratureConfig};
use crate::fem::{DofMap, Method, TetGeom, VelocityField};
use crate::mesh::TetMesh;
use crate::reconstruction::{bdm_local, facet_q_basis, facet_quad_points, FACET_MOMENT_DEGREE};
use crate::sparse::{SpMat, Triplets};

/// Number of tets per parallel work unit. Fixed so that results do not depend
/// on the thread count (chunks are merged in order).
const CHUNK: usize = 256;

type VecFn<'a> = dyn Fn(&Point3<f64>) -> Result<Vector3<f64>> + Sync + 'a;

/// Scalar CR stiffness (one velocity component, unit viscosity):
/// `S[f, g] = sum_T |T| grad(theta_f) . grad(theta_g)`.
pub fn assemble_a_scalar(mesh: &TetMesh) -> Result<SpMat> {
    let mut trips = Triplets::new(mesh.n_facets(), mesh.n_facets());
    for t in 0..mesh.n_tets() {
        let geom = TetGeom::for_tet(mesh, t)?;
        let grads = geom.cr_gradients();
        let local = mesh.tet_facets[t];
        for i in 0..4 {
            for j in 0..4 {
                trips.push(local[i], local[j], geom.volume * grads[i].dot(&grads[j]));
            }
        }
    }
    Ok(trips.to_csr())
}

/// Full vector stiffness `a_h` with viscosity `nu`, block-diagonal over the
/// three components: `A[3f+k, 3g+k] = nu * S[f, g]`.
pub fn assemble_a(mesh: &TetMesh, nu: f64) -> Result<SpMat> {
    let scalar = assemble_a_scalar(mesh)?;
    let mut trips = Triplets::new(3 * mesh.n_facets(), 3 * mesh.n_facets());
    for f in 0..scalar.nrows {
        for (g, v) in scalar.row(f) {
            for k in 0..3 {
                trips.push(3 * f + k, 3 * g + k, nu * v);
            }
        }
    }
    Ok(trips.to_csr())
}

/// Divergence form: row `T` applied to a CR coefficient vector yields
/// `-|T| (div_h v)|_T`.
pub fn assemble_b(mesh: &TetMesh) -> Result<SpMat> {
    let mut trips = Triplets::new(mesh.n_tets(), 3 * mesh.n_facets());
    for t in 0..mesh.n_tets() {
        let geom = TetGeom::for_tet(mesh, t)?;
        let grads = geom.cr_gradients();
        let local = mesh.tet_facets[t];
        for i in 0..4 {
            for k in 0..3 {
                trips.push(t, 3 * local[i] + k, -geom.volume * grads[i][k]);
            }
        }
    }
    Ok(trips.to_csr())
}

/// CR interpolation: per-facet componentwise means, computed with a degree-4
/// facet rule. Reproduces affine fields exactly.
pub fn interpolate_cr(mesh: &TetMesh, g: &VecFn<'_>) -> Result<VelocityField> {
    let rule = tri_rule(4);
    let mut v = VelocityField::zeros(mesh.n_facets());
    for f in 0..mesh.n_facets() {
        let mut mean = Vector3::zeros();
        for (x, w) in facet_quad_points(mesh, f, &rule) {
            mean += w * g(&x)?;
        }
        v.set_facet_value(f, &(mean / mesh.facets[f].area));
    }
    Ok(v)
}

fn merge_chunks(n: usize, chunks: Vec<Vec<(usize, f64)>>) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for chunk in chunks {
        for (i, v) in chunk {
            out[i] += v;
        }
    }
    out
}

/// Load vector `int f . tau` for every velocity dof, where `tau` is the CR
/// basis (standard method) or its H0(div) reconstruction (modified methods).
/// Rows of boundary facets carry no reconstruction contributions; they are
/// eliminated with the Dirichlet data anyway.
pub fn assemble_rhs(
    mesh: &TetMesh,
    dofmap: &DofMap,
    f: &VecFn<'_>,
    method: Method,
    quad: &QuadratureConfig,
) -> Result<Vec<f64>> {
    quad.validate()?;
    match method {
        Method::Cr => rhs_cr(mesh, f, quad),
        Method::CrRt => rhs_rt(mesh, f, quad),
        Method::CrBdm => rhs_bdm(mesh, dofmap, f, quad),
    }
}

fn chunk_ranges(n: usize) -> Vec<std::ops::Range<usize>> {
    (0..n.div_ceil(CHUNK))
        .map(|c| (c * CHUNK)..((c + 1) * CHUNK).min(n))
        .collect()
}

fn rhs_cr(mesh: &TetMesh, f: &VecFn<'_>, quad: &QuadratureConfig) -> Result<Vec<f64>> {
    let rule = tet_rule(quad.base_degree);
    let chunks: Vec<Result<Vec<(usize, f64)>>> = chunk_ranges(mesh.n_tets())
        .into_par_iter()
        .map(|range| {
            let mut acc = Vec::with_capacity(range.len() * 12);
            for t in range {
                let geom = TetGeom::for_tet(mesh, t)?;
                let local = mesh.tet_facets[t];
                let mut entries = [0.0f64; 12];
                let mut err = None;
                integrate_tet(&geom.verts, mesh.axis_touch(t), quad, &rule, &mut |x, w| {
                    if err.is_some() {
                        return;
                    }
                    match f(x) {
                        Ok(fx) => {
                            let theta = geom.cr_basis(x);
                            for i in 0..4 {
                                for k in 0..3 {
                                    entries[3 * i + k] += w * theta[i] * fx[k];
                                }
                            }
                        }
                        Err(e) => err = Some(e),
                    }
                });
                if let Some(e) = err {
                    return Err(e);
                }
                for i in 0..4 {
                    for k in 0..3 {
                        acc.push((3 * local[i] + k, entries[3 * i + k]));
                    }
                }
            }
            Ok(acc)
        })
        .collect();
    let chunks = chunks.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(merge_chunks(3 * mesh.n_facets(), chunks))
}

fn rhs_rt(mesh: &TetMesh, f: &VecFn<'_>, quad: &QuadratureConfig) -> Result<Vec<f64>> {
    let rule = tet_rule(quad.base_degree);
    let chunks: Vec<Result<Vec<(usize, f64)>>> = chunk_ranges(mesh.n_tets())
        .into_par_iter()
        .map(|range| {
            let mut acc = Vec::with_capacity(range.len() * 12);
            for t in range {
                let geom = TetGeom::for_tet(mesh, t)?;
                let local = mesh.tet_facets[t];
                // c_i = int_T f . (x - p_i) dx; the RT0 reconstruction of the
                // CR basis of facet i is s_i |F_i| (x - p_i) / (3V).
                let mut c = [0.0f64; 4];
                let mut err = None;
                integrate_tet(&geom.verts, mesh.axis_touch(t), quad, &rule, &mut |x, w| {
                    if err.is_some() {
                        return;
                    }
                    match f(x) {
                        Ok(fx) => {
                            for i in 0..4 {
                                c[i] += w * fx.dot(&(x - geom.verts[i]));
                            }
                        }
                        Err(e) => err = Some(e),
                    }
                });
                if let Some(e) = err {
                    return Err(e);
                }
                for i in 0..4 {
                    let fct = local[i];
                    let facet = &mesh.facets[fct];
                    let sign = if mesh.facet_outward(t, fct) { 1.0 } else { -1.0 };
                    let scale = sign * facet.area / (3.0 * geom.volume);
                    for k in 0..3 {
                        acc.push((3 * fct + k, facet.normal[k] * scale * c[i]));
                    }
                }
            }
            Ok(acc)
        })
        .collect();
    let chunks = chunks.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(merge_chunks(3 * mesh.n_facets(), chunks))
}

fn rhs_bdm(
    mesh: &TetMesh,
    dofmap: &DofMap,
    f: &VecFn<'_>,
    quad: &QuadratureConfig,
) -> Result<Vec<f64>> {
    let rule = tet_rule(quad.base_degree);

    // Pass 1: w[(G, m)] = int f . Psi_(G, m) over the owners of G, where
    // Psi_(G, m) is the global BDM basis field dual to the facet moments.
    let chunks: Vec<Result<Vec<(usize, f64)>>> = chunk_ranges(mesh.n_tets())
        .into_par_iter()
        .map(|range| {
            let mut acc = Vec::with_capacity(range.len() * 12);
            for t in range {
                let geom = TetGeom::for_tet(mesh, t)?;
                let local_basis = bdm_local(mesh, t, &geom)?;
                let local = mesh.tet_facets[t];
                let mut entries = [0.0f64; 12];
                let mut err = None;
                integrate_tet(&geom.verts, mesh.axis_touch(t), quad, &rule, &mut |x, w| {
                    if err.is_some() {
                        return;
                    }
                    match f(x) {
                        Ok(fx) => {
                            let lambda = geom.barycentric(x);
                            for dof in 0..12 {
                                let c = &local_basis.vertex_coeffs[dof];
                                let psi = c[0] * lambda[0]
                                    + c[1] * lambda[1]
                                    + c[2] * lambda[2]
                                    + c[3] * lambda[3];
                                entries[dof] += w * fx.dot(&psi);
                            }
                        }
                        Err(e) => err = Some(e),
                    }
                });
                if let Some(e) = err {
                    return Err(e);
                }
                for i in 0..4 {
                    for m in 0..3 {
                        acc.push((3 * local[i] + m, entries[3 * i + m]));
                    }
                }
            }
            Ok(acc)
        })
        .collect();
    let chunks = chunks.into_iter().collect::<Result<Vec<_>>>()?;
    let w_global = merge_chunks(3 * mesh.n_facets(), chunks);

    // Pass 2: distribute through the moment map of the test reconstruction,
    //   dof_(G, m)(theta_F e_k) = avg_{T in owners(G)} n_G[k] int_G theta_F q_m,
    // with boundary facets G dropped so the reconstruction lies in H0(div).
    let facet_rule = tri_rule(FACET_MOMENT_DEGREE);
    let chunks: Vec<Result<Vec<(usize, f64)>>> = chunk_ranges(mesh.n_tets())
        .into_par_iter()
        .map(|range| {
            let mut acc = Vec::new();
            for t in range {
                let geom = TetGeom::for_tet(mesh, t)?;
                let local = mesh.tet_facets[t];
                for j in 0..4 {
                    let g_facet = local[j];
                    if dofmap.is_boundary[g_facet] {
                        continue;
                    }
                    let facet = &mesh.facets[g_facet];
                    let n = facet.normal;
                    let weight = 0.5; // interior facets always have two owners
                    // moments[i][m] = int_G theta_i q_m over this facet.
                    let mut moments = [[0.0f64; 3]; 4];
                    for (x, w) in facet_quad_points(mesh, g_facet, &facet_rule) {
                        let theta = geom.cr_basis(&x);
                        let q = facet_q_basis(mesh, g_facet, &x);
                        for i in 0..4 {
                            for m in 0..3 {
                                moments[i][m] += w * theta[i] * q[m];
                            }
                        }
                    }
                    for i in 0..4 {
                        for k in 0..3 {
                            let mut val = 0.0;
                            for m in 0..3 {
                                val += moments[i][m] * w_global[3 * g_facet + m];
                            }
                            acc.push((3 * local[i] + k, weight * n[k] * val));
                        }
                    }
                }
            }
            Ok(acc)
        })
        .collect();
    let chunks = chunks.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(merge_chunks(3 * mesh.n_facets(), chunks))
}

/// Relative change of the load vector when the quadrature effort is raised by
/// two degrees and two subdivision levels (max-norm, scaled by the max entry).
pub fn rhs_quadrature_check(
    mesh: &TetMesh,
    dofmap: &DofMap,
    f: &VecFn<'_>,
    method: Method,
    quad: &QuadratureConfig,
) -> Result<f64> {
    let base = assemble_rhs(mesh, dofmap, f, method, quad)?;
    let fine = assemble_rhs(mesh, dofmap, f, method, &quad.refined(2, 2))?;
    let scale = base.iter().fold(0.0f64, |m, &v| m.max(v.abs())).max(1e-300);
    let diff = base
        .iter()
        .zip(&fine)
        .fold(0.0f64, |m, (&a, &b)| m.max((a - b).abs()));
    Ok(diff / scale)
}
