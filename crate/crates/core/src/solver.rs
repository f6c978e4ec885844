//! Saddle-point solver for the discrete Stokes system.
//!
//! The velocity block is block-diagonal over components (one scalar CR
//! stiffness), so it is factorized once by a sparse Cholesky and reused. The
//! pressure is obtained by preconditioned conjugate gradients on the Schur
//! complement `S = B A^-1 B^T`, which is spectrally equivalent to the
//! pressure mass matrix by inf-sup stability; the constant-pressure kernel is
//! projected out of every iterate.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Side;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::quadrature::QuadratureConfig;
use crate::fem::{
    assemble_a_scalar, assemble_b, assemble_rhs, interpolate_cr, DofMap, Method, PressureField,
    VelocityField,
};
use crate::mesh::TetMesh;
use crate::sparse::{write_vector_matrix_market, SpMat, Triplets};

type VecFn<'a> = dyn Fn(&nalgebra::Point3<f64>) -> crate::error::Result<nalgebra::Vector3<f64>>
    + Sync
    + 'a;

/// Reduced discrete Stokes system (boundary dofs eliminated).
pub struct StokesSystem {
    pub nu: f64,
    pub dofmap: DofMap,
    /// Scalar stiffness on free facets, unit viscosity.
    pub a_scalar: SpMat,
    /// Divergence block on free velocity dofs.
    pub b: SpMat,
    /// Velocity load, reduced by the Dirichlet coupling.
    pub rhs_u: Vec<f64>,
    /// Divergence data from eliminated boundary dofs, compatibility-projected.
    pub rhs_p: Vec<f64>,
    /// Full-length velocity field holding the prescribed boundary values.
    pub boundary: VelocityField,
    pub tet_volumes: Vec<f64>,
    pub total_volume: f64,
}

/// Cholesky factorization of the scalar velocity block.
///
/// Strong mesh anisotropy near the graded edge drives the condition number of
/// the CR stiffness far beyond what a plain factorization solve can absorb,
/// so the matrix is Jacobi-equilibrated before factorization and every solve
/// is polished by iterative refinement against the original matrix.
pub(crate) struct ScalarCholesky {
    llt: faer::sparse::linalg::solvers::Llt<usize, f64>,
    matrix: SpMat,
    dinv_sqrt: Vec<f64>,
    n: usize,
}

impl ScalarCholesky {
    pub(crate) fn new(a: &SpMat) -> Result<Self> {
        assert_eq!(a.nrows, a.ncols);
        let n = a.nrows;
        let mut dinv_sqrt = vec![1.0; n];
        for i in 0..n {
            let d = a.get(i, i);
            if d <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "stiffness diagonal {} at row {} is not positive",
                    d, i
                )));
            }
            dinv_sqrt[i] = 1.0 / d.sqrt();
        }
        let mut trips = Vec::with_capacity(a.nnz());
        for r in 0..n {
            for (c, v) in a.row(r) {
                trips.push(Triplet::new(r, c, v * dinv_sqrt[r] * dinv_sqrt[c]));
            }
        }
        let mat = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trips)
            .map_err(|e| Error::InvalidConfig(format!("sparse build failed: {:?}", e)))?;
        let llt = mat
            .sp_cholesky(Side::Lower)
            .map_err(|e| Error::InvalidConfig(format!("Cholesky failed: {:?}", e)))?;
        Ok(Self {
            llt,
            matrix: a.clone(),
            dinv_sqrt,
            n,
        })
    }

    /// One equilibrated backsolve of `k` interleaved right-hand sides.
    fn backsolve(&self, rhs: &[f64], k: usize) -> Vec<f64> {
        let mat =
            faer::Mat::<f64>::from_fn(self.n, k, |i, c| rhs[k * i + c] * self.dinv_sqrt[i]);
        let sol = self.llt.solve(&mat);
        let mut out = vec![0.0; self.n * k];
        for i in 0..self.n {
            for c in 0..k {
                out[k * i + c] = sol[(i, c)] * self.dinv_sqrt[i];
            }
        }
        out
    }

    fn residual_interleaved(&self, x: &[f64], rhs: &[f64], k: usize, out: &mut [f64]) {
        for i in 0..self.n {
            let mut acc = [0.0f64; 8];
            debug_assert!(k <= 8);
            for idx in self.matrix.indptr[i]..self.matrix.indptr[i + 1] {
                let col = self.matrix.indices[idx];
                let v = self.matrix.data[idx];
                for c in 0..k {
                    acc[c] += v * x[k * col + c];
                }
            }
            for c in 0..k {
                out[k * i + c] = rhs[k * i + c] - acc[c];
            }
        }
    }

    /// Solves the scalar system for `k` interleaved components with iterative
    /// refinement to near machine precision.
    pub(crate) fn solve_interleaved(&self, rhs: &[f64], k: usize) -> Vec<f64> {
        assert_eq!(rhs.len(), self.n * k);
        let rhs_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut x = self.backsolve(rhs, k);
        if rhs_norm == 0.0 {
            return x;
        }
        let mut r = vec![0.0; self.n * k];
        let mut best = x.clone();
        let mut best_res = f64::MAX;
        for _ in 0..30 {
            self.residual_interleaved(&x, rhs, k, &mut r);
            let res = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if res < best_res {
                best_res = res;
                best.copy_from_slice(&x);
            }
            if res <= 1e-14 * rhs_norm {
                return x;
            }
            if res > best_res * 10.0 {
                break;
            }
            let dx = self.backsolve(&r, k);
            for (xi, di) in x.iter_mut().zip(&dx) {
                *xi += di;
            }
        }
        best
    }
}

/// Restricts the stiffness and divergence blocks to free facets and applies
/// the Dirichlet coupling to the loads.
fn reduce_system(
    mesh: &TetMesh,
    dofmap: &DofMap,
    nu: f64,
    rhs_full: &[f64],
    boundary: &VelocityField,
) -> Result<(SpMat, SpMat, Vec<f64>, Vec<f64>)> {
    let a_full = assemble_a_scalar(mesh)?;
    let b_full = assemble_b(mesh)?;
    let n_free = dofmap.n_free_facets();

    let mut a_trips = Triplets::new(n_free, n_free);
    let mut rhs_u = vec![0.0; 3 * n_free];
    for (slot, &f) in dofmap.facet_of_free.iter().enumerate() {
        for k in 0..3 {
            rhs_u[3 * slot + k] = rhs_full[3 * f + k];
        }
        for (g, v) in a_full.row(f) {
            match dofmap.free_index[g] {
                Some(gslot) => a_trips.push(slot, gslot, v),
                None => {
                    // Dirichlet coupling moves to the right-hand side.
                    let gb = boundary.facet_value(g);
                    for k in 0..3 {
                        rhs_u[3 * slot + k] -= nu * v * gb[k];
                    }
                }
            }
        }
    }
    let a_scalar = a_trips.to_csr();

    let mut b_trips = Triplets::new(dofmap.n_p(), 3 * n_free);
    let mut rhs_p = vec![0.0; dofmap.n_p()];
    for t in 0..dofmap.n_p() {
        for (col, v) in b_full.row(t) {
            let (f, k) = (col / 3, col % 3);
            match dofmap.free_index[f] {
                Some(slot) => b_trips.push(t, 3 * slot + k, v),
                None => rhs_p[t] -= v * boundary.coeffs[3 * f + k],
            }
        }
    }
    let b = b_trips.to_csr();

    Ok((a_scalar, b, rhs_u, rhs_p))
}

impl StokesSystem {
    /// Assembles the reduced system for data `f` and Dirichlet trace `g`
    /// (`None` for the homogeneous problem).
    pub fn build(
        mesh: &TetMesh,
        dofmap: &DofMap,
        nu: f64,
        method: Method,
        quad: &QuadratureConfig,
        f: &VecFn<'_>,
        g: Option<&VecFn<'_>>,
    ) -> Result<Self> {
        if !(nu > 0.0) {
            return Err(Error::InvalidConfig(format!("nu = {} must be positive", nu)));
        }
        let rhs_full = assemble_rhs(mesh, dofmap, f, method, quad)?;
        let mut boundary = VelocityField::zeros(mesh.n_facets());
        if let Some(g) = g {
            let interp = interpolate_cr(mesh, g)?;
            for &fct in &dofmap.boundary_facets {
                boundary.set_facet_value(fct, &interp.facet_value(fct));
            }
        }
        let (a_scalar, b, rhs_u, mut rhs_p) =
            reduce_system(mesh, dofmap, nu, &rhs_full, &boundary)?;

        // The polygonal boundary carries an O(h^2) flux defect of the exact
        // trace; project it out so the constraint is consistent. This relaxes
        // the divergence to a uniform constant of that size.
        let total_volume = mesh.total_volume();
        let defect: f64 = rhs_p.iter().sum();
        for (t, v) in rhs_p.iter_mut().enumerate() {
            *v -= defect * mesh.tet_volumes[t] / total_volume;
        }

        Ok(Self {
            nu,
            dofmap: dofmap.clone(),
            a_scalar,
            b,
            rhs_u,
            rhs_p,
            boundary,
            tet_volumes: mesh.tet_volumes.clone(),
            total_volume,
        })
    }

    /// Applies the viscous block (including `nu`) to a reduced velocity vector.
    pub fn apply_a(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dofmap.n_free_facets();
        let mut y = vec![0.0; 3 * n];
        for slot in 0..n {
            for (g, v) in self.a_scalar.row(slot) {
                for k in 0..3 {
                    y[3 * slot + k] += self.nu * v * x[3 * g + k];
                }
            }
        }
        y
    }

    /// Replaces the load by `A u*` for a manufactured reduced velocity `u*`.
    pub fn with_manufactured_velocity(mut self, u_star: &[f64]) -> Self {
        self.rhs_u = self.apply_a(u_star);
        self.rhs_p = self.b.mul_vec(u_star);
        self.boundary = VelocityField::zeros(self.boundary.n_facets());
        self
    }

    /// Dumps the assembled blocks in Matrix Market format:
    /// `<prefix>_a_scalar.mtx` (unit viscosity), `<prefix>_b.mtx`,
    /// `<prefix>_rhs_u.mtx`, `<prefix>_rhs_p.mtx`.
    pub fn dump_matrix_market(&self, prefix: &std::path::Path) -> std::io::Result<()> {
        let with_suffix = |s: &str| {
            let mut os = prefix.as_os_str().to_os_string();
            os.push(s);
            std::path::PathBuf::from(os)
        };
        self.a_scalar.write_matrix_market(
            &with_suffix("_a_scalar.mtx"),
            "scalar CR stiffness on free facets, unit viscosity",
        )?;
        self.b
            .write_matrix_market(&with_suffix("_b.mtx"), "divergence block, free dofs")?;
        write_vector_matrix_market(&self.rhs_u, &with_suffix("_rhs_u.mtx"), "velocity load")?;
        write_vector_matrix_market(&self.rhs_p, &with_suffix("_rhs_p.mtx"), "divergence data")
    }
}

/// Crate-internal access to the scalar factorization (used by the inf-sup
/// estimator).
pub(crate) fn new_scalar_cholesky(a: &SpMat) -> Result<ScalarCholesky> {
    ScalarCholesky::new(a)
}

#[doc(hidden)]
pub struct DebugCholesky(ScalarCholesky);

#[doc(hidden)]
impl DebugCholesky {
    pub fn solve1(&self, rhs: &[f64]) -> Vec<f64> {
        self.0.solve_interleaved(rhs, 1)
    }
}

#[doc(hidden)]
pub fn debug_cholesky(a: &SpMat) -> Result<DebugCholesky> {
    Ok(DebugCholesky(ScalarCholesky::new(a)?))
}

#[doc(hidden)]
pub fn debug_schur_cg_trace(system: &StokesSystem, max_iter: usize) {
    let chol = ScalarCholesky::new(&system.a_scalar).unwrap();
    let inv_nu = 1.0 / system.nu;
    let apply_a_inv = |x: &[f64]| -> Vec<f64> {
        let mut y = chol.solve_interleaved(x, 3);
        for v in y.iter_mut() {
            *v *= inv_nu;
        }
        y
    };
    let project = |v: &mut [f64]| {
        let mean: f64 = v.iter().sum::<f64>() / v.len() as f64;
        for x in v.iter_mut() {
            *x -= mean;
        }
    };
    let n_p = system.rhs_p.len();
    let u_particular = apply_a_inv(&system.rhs_u);
    let mut d = system.b.mul_vec(&u_particular);
    for (t, g) in system.rhs_p.iter().enumerate() {
        d[t] -= g;
    }
    project(&mut d);
    let apply_s = |q: &[f64]| -> Vec<f64> {
        let bt_q = system.b.transpose_mul_vec(q);
        let a_inv = apply_a_inv(&bt_q);
        system.b.mul_vec(&a_inv)
    };
    let precond = |r: &[f64]| -> Vec<f64> {
        r.iter()
            .enumerate()
            .map(|(t, &x)| system.nu * x / system.tet_volumes[t])
            .collect()
    };
    let d_norm = norm(&d);
    println!("d_norm {:.3e}", d_norm);
    let mut p = vec![0.0; n_p];
    let mut r = d.clone();
    let mut z = precond(&r);
    let mut q = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    for it in 0..max_iter {
        if it % 100 == 0 {
            println!("iter {:>5}: rel residual {:.3e}", it, norm(&r) / d_norm);
        }
        let sq = apply_s(&q);
        let qsq: f64 = q.iter().zip(&sq).map(|(a, b)| a * b).sum();
        let alpha = rz / qsq;
        for i in 0..n_p {
            p[i] += alpha * q[i];
            r[i] -= alpha * sq[i];
        }
        project(&mut r);
        z = precond(&r);
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n_p {
            q[i] = z[i] + beta * q[i];
        }
    }
    println!("final rel residual {:.3e}", norm(&r) / d_norm);
}

/// Convergence report of one solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub momentum_residual: f64,
    pub continuity_residual: f64,
    pub cg_iterations: usize,
    pub tolerance: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Solves the saddle-point system to the requested blockwise relative
/// residual (callers default to 1e-10).
pub fn solve(
    system: &StokesSystem,
    tol: f64,
    max_iter: usize,
) -> Result<(VelocityField, PressureField, SolveReport)> {
    if !(tol > 0.0 && tol <= 1e-6) {
        return Err(Error::InvalidConfig(format!(
            "solver tolerance {} not in (0, 1e-6]",
            tol
        )));
    }
    let n_free = system.dofmap.n_free_facets();
    let n_p = system.rhs_p.len();
    let chol = ScalarCholesky::new(&system.a_scalar)?;
    let inv_nu = 1.0 / system.nu;

    let apply_a_inv = |x: &[f64]| -> Vec<f64> {
        let mut y = chol.solve_interleaved(x, 3);
        for v in y.iter_mut() {
            *v *= inv_nu;
        }
        y
    };

    // Schur right-hand side d = B A^-1 f - g_p, projected onto the image of S
    // (constants are the kernel).
    let project = |v: &mut [f64]| {
        let mean: f64 = v.iter().sum::<f64>() / v.len() as f64;
        for x in v.iter_mut() {
            *x -= mean;
        }
    };
    let u_particular = apply_a_inv(&system.rhs_u);
    let mut d = system.b.mul_vec(&u_particular);
    for (t, g) in system.rhs_p.iter().enumerate() {
        d[t] -= g;
    }
    project(&mut d);

    let apply_s = |q: &[f64]| -> Vec<f64> {
        let bt_q = system.b.transpose_mul_vec(q);
        let a_inv = apply_a_inv(&bt_q);
        system.b.mul_vec(&a_inv)
    };
    // Mass preconditioner: S scales like nu^-1 M_p.
    let precond = |r: &[f64]| -> Vec<f64> {
        r.iter()
            .enumerate()
            .map(|(t, &x)| system.nu * x / system.tet_volumes[t])
            .collect()
    };

    let mut p = vec![0.0; n_p];
    let d_norm = norm(&d);
    let mut cg_iterations = 0;
    if d_norm > 0.0 {
        let mut r = d.clone();
        let mut z = precond(&r);
        let mut q = z.clone();
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let target = tol * d_norm;
        loop {
            if norm(&r) <= target {
                break;
            }
            if cg_iterations >= max_iter {
                return Err(Error::SolverDidNotConverge {
                    max_iter,
                    best_residual: norm(&r) / d_norm,
                    tol,
                });
            }
            let sq = apply_s(&q);
            let qsq: f64 = q.iter().zip(&sq).map(|(a, b)| a * b).sum();
            if qsq <= 0.0 {
                return Err(Error::SolverDidNotConverge {
                    max_iter,
                    best_residual: norm(&r) / d_norm,
                    tol,
                });
            }
            let alpha = rz / qsq;
            for i in 0..n_p {
                p[i] += alpha * q[i];
                r[i] -= alpha * sq[i];
            }
            project(&mut r);
            z = precond(&r);
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n_p {
                q[i] = z[i] + beta * q[i];
            }
            cg_iterations += 1;
        }
    }

    // Back-substitution for the velocity.
    let bt_p = system.b.transpose_mul_vec(&p);
    let mut rhs_minus = system.rhs_u.clone();
    for i in 0..rhs_minus.len() {
        rhs_minus[i] -= bt_p[i];
    }
    let u_free = apply_a_inv(&rhs_minus);

    // Residual audit.
    let mom = {
        let au = system.apply_a(&u_free);
        let mut res = vec![0.0; 3 * n_free];
        for i in 0..res.len() {
            res[i] = au[i] + bt_p[i] - system.rhs_u[i];
        }
        let scale = norm(&system.rhs_u).max(norm(&au)).max(norm(&bt_p));
        if scale > 0.0 {
            norm(&res) / scale
        } else {
            norm(&res)
        }
    };
    let cont = {
        let bu = system.b.mul_vec(&u_free);
        let mut res = vec![0.0; n_p];
        for t in 0..n_p {
            res[t] = bu[t] - system.rhs_p[t];
        }
        // Reference scale |B| |u| guards against 0 = 0 constraints.
        let mut abs_ref = vec![0.0; n_p];
        for t in 0..n_p {
            for (c, v) in system.b.row(t) {
                abs_ref[t] += v.abs() * u_free[c].abs();
            }
        }
        let scale = norm(&abs_ref).max(norm(&system.rhs_p)).max(d_norm);
        if scale > 0.0 {
            norm(&res) / scale
        } else {
            norm(&res)
        }
    };
    let report = SolveReport {
        momentum_residual: mom,
        continuity_residual: cont,
        cg_iterations,
        tolerance: tol,
    };
    if mom > tol * 10.0 || cont > tol * 10.0 {
        return Err(Error::SolverDidNotConverge {
            max_iter,
            best_residual: mom.max(cont),
            tol,
        });
    }

    // Assemble the full velocity and shift the pressure to zero mean.
    let mut velocity = system.boundary.clone();
    for (slot, &f) in system.dofmap.facet_of_free.iter().enumerate() {
        for k in 0..3 {
            velocity.coeffs[3 * f + k] = u_free[3 * slot + k];
        }
    }
    let mut pressure = PressureField { coeffs: p };
    let mean: f64 = pressure
        .coeffs
        .iter()
        .zip(&system.tet_volumes)
        .map(|(p, v)| p * v)
        .sum::<f64>()
        / system.total_volume;
    for x in pressure.coeffs.iter_mut() {
        *x -= mean;
    }

    Ok((velocity, pressure, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::quadrature::QuadratureConfig;
    use crate::mesh::{build_tet_mesh, GradingConfig};
    use crate::reconstruction::cr_divergence;
    use nalgebra::{Point3, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(h: f64) -> (crate::mesh::TetMesh, DofMap) {
        let mesh = build_tet_mesh(&GradingConfig::new(h, 0.4)).unwrap();
        let dofs = DofMap::new(&mesh);
        (mesh, dofs)
    }

    // Not a gradient field, so even the pressure-robust methods see it.
    fn smooth_f(p: &Point3<f64>) -> crate::error::Result<Vector3<f64>> {
        Ok(Vector3::new(p.y, p.z, p.x))
    }

    #[test]
    fn zero_load_gives_zero_solution() {
        let (mesh, dofs) = setup(0.5);
        let quad = QuadratureConfig::default();
        let system = StokesSystem::build(
            &mesh,
            &dofs,
            1.0,
            Method::Cr,
            &quad,
            &|_| Ok(Vector3::zeros()),
            None,
        )
        .unwrap();
        let (u, p, report) = solve(&system, 1e-10, 500).unwrap();
        assert!(u.coeffs.iter().all(|&c| c.abs() < 1e-14));
        assert!(p.coeffs.iter().all(|&c| c.abs() < 1e-14));
        assert_eq!(report.cg_iterations, 0);
    }

    #[test]
    fn viscosity_scaling_is_exact() {
        let (mesh, dofs) = setup(0.5);
        let quad = QuadratureConfig::default();
        let solve_with_nu = |nu: f64| {
            let system =
                StokesSystem::build(&mesh, &dofs, nu, Method::CrRt, &quad, &smooth_f, None)
                    .unwrap();
            solve(&system, 1e-11, 1000).unwrap()
        };
        let (u1, p1, _) = solve_with_nu(1.0);
        let (u2, p2, _) = solve_with_nu(2.0);
        let u_scale = u1.coeffs.iter().fold(0.0f64, |m, &c| m.max(c.abs()));
        for i in 0..u1.coeffs.len() {
            assert!(
                (u1.coeffs[i] - 2.0 * u2.coeffs[i]).abs() <= 1e-9 * u_scale,
                "velocity did not scale with 1/nu at dof {}",
                i
            );
        }
        let p_scale = p1.coeffs.iter().fold(0.0f64, |m, &c| m.max(c.abs()));
        for i in 0..p1.coeffs.len() {
            assert!((p1.coeffs[i] - p2.coeffs[i]).abs() <= 1e-9 * p_scale);
        }
    }

    #[test]
    fn manufactured_discretely_divergence_free_velocity_is_recovered() {
        let (mesh, dofs) = setup(0.5);
        let quad = QuadratureConfig::default();
        // Solve once to obtain a discretely divergence-free field.
        let base =
            StokesSystem::build(&mesh, &dofs, 1.0, Method::Cr, &quad, &smooth_f, None).unwrap();
        let tol = 1e-10;
        let (u_star_field, _, _) = solve(&base, tol, 1000).unwrap();
        let mut u_star = vec![0.0; 3 * dofs.n_free_facets()];
        for (slot, &f) in dofs.facet_of_free.iter().enumerate() {
            for k in 0..3 {
                u_star[3 * slot + k] = u_star_field.coeffs[3 * f + k];
            }
        }
        let manufactured = StokesSystem::build(
            &mesh,
            &dofs,
            1.0,
            Method::Cr,
            &quad,
            &|_| Ok(Vector3::zeros()),
            None,
        )
        .unwrap()
        .with_manufactured_velocity(&u_star);
        let (u, _, _) = solve(&manufactured, tol, 1000).unwrap();
        let scale = u_star.iter().fold(0.0f64, |m, &c| m.max(c.abs()));
        for (slot, &f) in dofs.facet_of_free.iter().enumerate() {
            for k in 0..3 {
                let got = u.coeffs[3 * f + k];
                let want = u_star[3 * slot + k];
                assert!(
                    (got - want).abs() <= 10.0 * tol * scale,
                    "dof ({}, {}): {} vs {}",
                    slot,
                    k,
                    got,
                    want
                );
            }
        }
    }

    #[test]
    fn solved_velocity_is_discretely_divergence_free() {
        let (mesh, dofs) = setup(0.35);
        let quad = QuadratureConfig::default();
        for method in [Method::Cr, Method::CrRt, Method::CrBdm] {
            let system =
                StokesSystem::build(&mesh, &dofs, 1.0, method, &quad, &smooth_f, None).unwrap();
            let (u, _, report) = solve(&system, 1e-10, 1000).unwrap();
            assert!(report.momentum_residual <= 1e-9);
            assert!(report.continuity_residual <= 1e-9);
            let a = crate::fem::assemble_a(&mesh, 1.0).unwrap();
            let au = a.mul_vec(&u.coeffs);
            let h1 = au
                .iter()
                .zip(&u.coeffs)
                .map(|(x, y)| x * y)
                .sum::<f64>()
                .sqrt();
            for t in 0..mesh.n_tets() {
                let geom = crate::fem::TetGeom::for_tet(&mesh, t).unwrap();
                let div = cr_divergence(&mesh, &u, t, &geom);
                assert!(
                    div.abs() <= 1e-9 * h1.max(1e-30),
                    "{:?} tet {}: div {} vs |u|_1h {}",
                    method,
                    t,
                    div,
                    h1
                );
            }
        }
    }

    #[test]
    fn pressure_has_zero_volume_weighted_mean() {
        let (mesh, dofs) = setup(0.5);
        let quad = QuadratureConfig::default();
        let system =
            StokesSystem::build(&mesh, &dofs, 1.0, Method::CrBdm, &quad, &smooth_f, None).unwrap();
        let (_, p, _) = solve(&system, 1e-10, 500).unwrap();
        let mean: f64 = p
            .coeffs
            .iter()
            .zip(&mesh.tet_volumes)
            .map(|(p, v)| p * v)
            .sum();
        let p_norm = p
            .coeffs
            .iter()
            .zip(&mesh.tet_volumes)
            .map(|(p, v)| p * p * v)
            .sum::<f64>()
            .sqrt();
        assert!(mean.abs() <= 1e-12 * p_norm.max(1e-30) * mesh.total_volume().sqrt());
    }

    #[test]
    fn solves_are_deterministic() {
        let (mesh, dofs) = setup(0.5);
        let quad = QuadratureConfig::default();
        let run = || {
            let system =
                StokesSystem::build(&mesh, &dofs, 0.1, Method::CrRt, &quad, &smooth_f, None)
                    .unwrap();
            solve(&system, 1e-10, 500).unwrap()
        };
        let (u1, p1, _) = run();
        let (u2, p2, _) = run();
        assert_eq!(u1.coeffs, u2.coeffs);
        assert_eq!(p1.coeffs, p2.coeffs);
    }

    #[test]
    fn schur_operator_is_spsd_with_constant_kernel() {
        let (mesh, dofs) = setup(0.5);
        let quad = QuadratureConfig::default();
        let system =
            StokesSystem::build(&mesh, &dofs, 1.0, Method::Cr, &quad, &smooth_f, None).unwrap();
        let chol = ScalarCholesky::new(&system.a_scalar).unwrap();
        let apply_s = |q: &[f64]| -> Vec<f64> {
            let bt = system.b.transpose_mul_vec(q);
            let ainv = chol.solve_interleaved(&bt, 3);
            system.b.mul_vec(&ainv)
        };
        let n_p = mesh.n_tets();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..3 {
            let x: Vec<f64> = (0..n_p).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..n_p).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let sx = apply_s(&x);
            let sy = apply_s(&y);
            let xsy: f64 = x.iter().zip(&sy).map(|(a, b)| a * b).sum();
            let ysx: f64 = y.iter().zip(&sx).map(|(a, b)| a * b).sum();
            assert!((xsy - ysx).abs() <= 1e-10 * xsy.abs().max(1.0));
            let xsx: f64 = x.iter().zip(&sx).map(|(a, b)| a * b).sum();
            assert!(xsx >= -1e-12);
        }
        let ones = vec![1.0; n_p];
        let s_ones = apply_s(&ones);
        assert!(norm(&s_ones) <= 1e-10 * (n_p as f64).sqrt());
    }

    #[test]
    fn gradient_load_produces_zero_velocity_for_modified_methods() {
        // Hydrostatic case: f = grad(x y z) changes only the pressure for the
        // reconstructed methods, while the standard method picks up a spurious
        // velocity.
        let (mesh, dofs) = setup(0.5);
        let quad = QuadratureConfig::default();
        let grad_field =
            |p: &Point3<f64>| Ok(Vector3::new(p.y * p.z, p.x * p.z, p.x * p.y));
        let h1_norm = |u: &VelocityField| {
            let a = crate::fem::assemble_a(&mesh, 1.0).unwrap();
            let au = a.mul_vec(&u.coeffs);
            au.iter()
                .zip(&u.coeffs)
                .map(|(x, y)| x * y)
                .sum::<f64>()
                .sqrt()
        };
        let mut norms = Vec::new();
        for method in [Method::Cr, Method::CrRt, Method::CrBdm] {
            let system =
                StokesSystem::build(&mesh, &dofs, 1.0, method, &quad, &grad_field, None).unwrap();
            let (u, _, _) = solve(&system, 1e-10, 1000).unwrap();
            norms.push(h1_norm(&u));
        }
        assert!(norms[0] > 1e-3, "standard CR should lock: |u|_1h = {}", norms[0]);
        assert!(norms[1] <= 1e-9, "CR-RT velocity not invariant: {}", norms[1]);
        assert!(norms[2] <= 1e-9, "CR-BDM velocity not invariant: {}", norms[2]);
    }

    #[test]
    fn matrix_market_dump_has_expected_files() {
        let (mesh, dofs) = setup(0.5);
        let quad = QuadratureConfig::default();
        let system =
            StokesSystem::build(&mesh, &dofs, 1.0, Method::Cr, &quad, &smooth_f, None).unwrap();
        let dir = std::env::temp_dir().join("prstokes_dump_test");
        std::fs::create_dir_all(&dir).unwrap();
        let prefix = dir.join("sys");
        system.dump_matrix_market(&prefix).unwrap();
        for suffix in ["_a_scalar.mtx", "_b.mtx", "_rhs_u.mtx", "_rhs_p.mtx"] {
            let path = dir.join(format!("sys{}", suffix));
            let text = std::fs::read_to_string(&path).unwrap();
            assert!(text.starts_with("%%MatrixMarket"));
        }
        std::fs::remove_dir_all(&dir).ok();
    }
}
