//! Convergence studies: error norms against the closed-form solutions,
//! experimental orders of convergence, inf-sup estimation, and the
//! gradient-invariance experiment.

use std::time::Instant;

use nalgebra::{Matrix3, Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{ExactCase, ExampleKind, PhiVariant};
use crate::fem::quadrature::{integrate_tet, tet_rule, QuadratureConfig};
use crate::fem::{DofMap, Method, PressureField, TetGeom, VelocityField};
use crate::mesh::{build_tet_mesh, mesh_quality, GradingConfig, TetMesh};
use crate::solver::{solve, SolveReport, StokesSystem};

/// Parameters of one convergence study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyConfig {
    pub example: ExampleKind,
    pub method: Method,
    pub nu: f64,
    pub mu: f64,
    pub levels: usize,
    pub phi_variant: PhiVariant,
    pub quad: QuadratureConfig,
    pub solver_tol: f64,
    pub solver_max_iter: usize,
    /// Mesh size of the coarsest level; level `k` uses `h0 / 2^k`.
    pub h0: f64,
    pub omega: f64,
    pub big_r: f64,
    pub z_len: f64,
    pub size_constant: f64,
}

impl StudyConfig {
    pub fn new(example: ExampleKind, method: Method) -> Self {
        Self {
            example,
            method,
            nu: 1.0,
            mu: 0.4,
            levels: 4,
            phi_variant: PhiVariant::Phi1,
            quad: QuadratureConfig::default(),
            solver_tol: 1e-10,
            solver_max_iter: 5000,
            h0: 0.5,
            omega: 1.5 * std::f64::consts::PI,
            big_r: 1.0,
            z_len: 1.0,
            size_constant: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::InvalidConfig(format!(
                "levels = {} must be at least 2",
                self.levels
            )));
        }
        if !(self.h0 > 0.0 && self.h0 <= 1.0) {
            return Err(Error::InvalidConfig(format!("h0 = {} not in (0, 1]", self.h0)));
        }
        self.quad.validate()?;
        self.grading_config(0).validate()
    }

    pub fn grading_config(&self, level: usize) -> GradingConfig {
        let mut cfg = GradingConfig::new(self.h0 / 2f64.powi(level as i32), self.mu);
        cfg.omega = self.omega;
        cfg.big_r = self.big_r;
        cfg.z_len = self.z_len;
        cfg.size_constant = self.size_constant;
        cfg
    }

    pub fn exact_case(&self) -> Result<ExactCase> {
        match self.example {
            ExampleKind::Example1 => ExactCase::example1(self.nu, self.omega),
            ExampleKind::Example2 => ExactCase::example2(self.nu, self.omega, self.phi_variant),
        }
    }
}

/// Per-level record of a study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelResult {
    pub level: usize,
    pub h: f64,
    pub ndof: usize,
    pub n_tets: usize,
    pub err_u_1h: f64,
    pub err_p_0: f64,
    pub eoc_u: Option<f64>,
    pub eoc_p: Option<f64>,
    pub max_dihedral_angle: f64,
    pub solve: SolveReport,
    pub wall_time_s: f64,
}

/// Pass/fail summary of a study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudySummary {
    pub errors_monotone_u: bool,
    pub errors_monotone_p: bool,
    pub final_eoc_u: Option<f64>,
    pub final_eoc_p: Option<f64>,
    /// For adequately graded meshes (`mu < lambda`): final velocity EOC >= 0.9
    /// and final pressure EOC >= 1.0. `None` when the grading is insufficient
    /// by design (e.g. quasi-uniform runs).
    pub rate_target_met: Option<bool>,
    pub passed: bool,
}

/// Full study output; serializable and reproducible from the config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyReport {
    pub config: StudyConfig,
    pub lambda: f64,
    pub levels: Vec<LevelResult>,
    /// Failure text when the study stopped early; `levels` then holds the
    /// completed prefix.
    pub aborted: Option<String>,
    pub summary: StudySummary,
}

type MatFn<'a> = dyn Fn(&Point3<f64>) -> Result<Matrix3<f64>> + Sync + 'a;
type ScalFn<'a> = dyn Fn(&Point3<f64>) -> Result<f64> + Sync + 'a;

const CHUNK: usize = 256;

fn chunk_ranges(n: usize) -> Vec<std::ops::Range<usize>> {
    (0..n.div_ceil(CHUNK))
        .map(|c| (c * CHUNK)..((c + 1) * CHUNK).min(n))
        .collect()
}

/// Broken H1 seminorm error `|| grad u - grad_h u_h ||_0` with the
/// singularity-aware quadrature.
pub fn error_velocity_h1(
    mesh: &TetMesh,
    u_h: &VelocityField,
    case: &ExactCase,
    quad: &QuadratureConfig,
) -> Result<f64> {
    error_velocity_h1_with(mesh, u_h, &|p| case.velocity_gradient(p), quad)
}

pub fn error_velocity_h1_with(
    mesh: &TetMesh,
    u_h: &VelocityField,
    grad_exact: &MatFn<'_>,
    quad: &QuadratureConfig,
) -> Result<f64> {
    let rule = tet_rule(quad.base_degree);
    let partials: Vec<Result<f64>> = chunk_ranges(mesh.n_tets())
        .into_par_iter()
        .map(|range| {
            let mut acc = 0.0;
            for t in range {
                let geom = TetGeom::for_tet(mesh, t)?;
                let grads = geom.cr_gradients();
                let local = mesh.tet_facets[t];
                let mut gh = Matrix3::<f64>::zeros();
                for i in 0..4 {
                    let c = u_h.facet_value(local[i]);
                    for k in 0..3 {
                        for l in 0..3 {
                            gh[(k, l)] += c[k] * grads[i][l];
                        }
                    }
                }
                let mut err = None;
                integrate_tet(&geom.verts, mesh.axis_touch(t), quad, &rule, &mut |x, w| {
                    if err.is_some() {
                        return;
                    }
                    match grad_exact(x) {
                        Ok(ge) => acc += w * (ge - gh).norm_squared(),
                        Err(e) => err = Some(e),
                    }
                });
                if let Some(e) = err {
                    return Err(e);
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total = 0.0;
    for p in partials {
        total += p?;
    }
    Ok(total.sqrt())
}

/// L2 pressure error with both pressures shifted to zero mean over the domain
/// (the exact mean is computed with the same quadrature).
pub fn error_pressure_l2(
    mesh: &TetMesh,
    p_h: &PressureField,
    case: &ExactCase,
    quad: &QuadratureConfig,
) -> Result<f64> {
    error_pressure_l2_with(mesh, p_h, &|p| case.pressure(p), quad)
}

pub fn error_pressure_l2_with(
    mesh: &TetMesh,
    p_h: &PressureField,
    p_exact: &ScalFn<'_>,
    quad: &QuadratureConfig,
) -> Result<f64> {
    let rule = tet_rule(quad.base_degree);
    // One quadrature pass accumulating per-tet int p and int p^2.
    let partials: Vec<Result<Vec<(usize, f64, f64)>>> = chunk_ranges(mesh.n_tets())
        .into_par_iter()
        .map(|range| {
            let mut acc = Vec::with_capacity(range.len());
            for t in range {
                let geom = TetGeom::for_tet(mesh, t)?;
                let (mut s1, mut s2) = (0.0, 0.0);
                let mut err = None;
                integrate_tet(&geom.verts, mesh.axis_touch(t), quad, &rule, &mut |x, w| {
                    if err.is_some() {
                        return;
                    }
                    match p_exact(x) {
                        Ok(pe) => {
                            s1 += w * pe;
                            s2 += w * pe * pe;
                        }
                        Err(e) => err = Some(e),
                    }
                });
                if let Some(e) = err {
                    return Err(e);
                }
                acc.push((t, s1, s2));
            }
            Ok(acc)
        })
        .collect();
    let mut s1 = vec![0.0; mesh.n_tets()];
    let mut s2 = vec![0.0; mesh.n_tets()];
    for chunk in partials {
        for (t, a, b) in chunk? {
            s1[t] = a;
            s2[t] = b;
        }
    }
    let volume = mesh.total_volume();
    let exact_mean = s1.iter().sum::<f64>() / volume;
    // Shift the discrete pressure to zero volume-weighted mean as well.
    let ph_mean = p_h
        .coeffs
        .iter()
        .zip(&mesh.tet_volumes)
        .map(|(p, v)| p * v)
        .sum::<f64>()
        / volume;
    let mut total = 0.0;
    for t in 0..mesh.n_tets() {
        let shift = exact_mean + (p_h.coeffs[t] - ph_mean);
        // int (p - shift)^2 = int p^2 - 2 shift int p + shift^2 |T|.
        total += s2[t] - 2.0 * shift * s1[t] + shift * shift * mesh.tet_volumes[t];
    }
    // Quadrature roundoff can leave a tiny negative sum when the error is ~0.
    Ok(total.max(0.0).sqrt())
}

/// Experimental order of convergence on 3D dof counts:
/// `eoc_k = 3 ln(e_(k-1) / e_k) / ln(N_k / N_(k-1))`.
pub fn compute_eoc(errors: &[f64], ndofs: &[usize]) -> Result<Vec<f64>> {
    if errors.len() != ndofs.len() || errors.len() < 2 {
        return Err(Error::InvalidConfig(
            "need matching error/ndof sequences of length >= 2".into(),
        ));
    }
    if errors.iter().any(|&e| e <= 0.0) {
        return Err(Error::InvalidConfig(
            "EOC requires strictly positive errors".into(),
        ));
    }
    Ok((1..errors.len())
        .map(|k| {
            3.0 * (errors[k - 1] / errors[k]).ln() / (ndofs[k] as f64 / ndofs[k - 1] as f64).ln()
        })
        .collect())
}

/// Runs the full study. A failing level stops the run and is recorded in the
/// report; the completed levels are kept.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyReport> {
    cfg.validate()?;
    let case = cfg.exact_case()?;
    let lambda = case.exponent.lambda;
    let mut levels: Vec<LevelResult> = Vec::with_capacity(cfg.levels);
    let mut aborted = None;

    for level in 0..cfg.levels {
        let start = Instant::now();
        match run_level(cfg, &case, level, levels.last()) {
            Ok(mut result) => {
                result.wall_time_s = start.elapsed().as_secs_f64();
                levels.push(result);
            }
            Err(e) => {
                aborted = Some(format!("level {}: {}", level, e));
                break;
            }
        }
    }

    let summary = summarize(cfg, lambda, &levels, aborted.is_some());
    Ok(StudyReport {
        config: cfg.clone(),
        lambda,
        levels,
        aborted,
        summary,
    })
}

fn run_level(
    cfg: &StudyConfig,
    case: &ExactCase,
    level: usize,
    previous: Option<&LevelResult>,
) -> Result<LevelResult> {
    let grading = cfg.grading_config(level);
    let mesh = build_tet_mesh(&grading)?;
    let dofmap = DofMap::new(&mesh);
    let quality = mesh_quality(&mesh, &grading);

    let f = |p: &Point3<f64>| case.data_f(p);
    let g = |p: &Point3<f64>| case.velocity(p);
    let system = StokesSystem::build(&mesh, &dofmap, cfg.nu, cfg.method, &cfg.quad, &f, Some(&g))?;
    let (u_h, p_h, solve_report) = solve(&system, cfg.solver_tol, cfg.solver_max_iter)?;

    let err_u = error_velocity_h1(&mesh, &u_h, case, &cfg.quad)?;
    let err_p = error_pressure_l2(&mesh, &p_h, case, &cfg.quad)?;
    let ndof = dofmap.n_unknowns();

    let (eoc_u, eoc_p) = match previous {
        Some(prev) => {
            let ratio = (ndof as f64 / prev.ndof as f64).ln();
            (
                Some(3.0 * (prev.err_u_1h / err_u).ln() / ratio),
                Some(3.0 * (prev.err_p_0 / err_p).ln() / ratio),
            )
        }
        None => (None, None),
    };

    Ok(LevelResult {
        level,
        h: grading.h,
        ndof,
        n_tets: mesh.n_tets(),
        err_u_1h: err_u,
        err_p_0: err_p,
        eoc_u,
        eoc_p,
        max_dihedral_angle: quality.max_dihedral_angle,
        solve: solve_report,
        wall_time_s: 0.0,
    })
}

fn summarize(
    cfg: &StudyConfig,
    lambda: f64,
    levels: &[LevelResult],
    aborted: bool,
) -> StudySummary {
    let monotone = |values: Vec<f64>| values.windows(2).all(|w| w[1] < w[0]);
    let errors_monotone_u = monotone(levels.iter().map(|l| l.err_u_1h).collect());
    let errors_monotone_p = monotone(levels.iter().map(|l| l.err_p_0).collect());
    let final_eoc_u = levels.last().and_then(|l| l.eoc_u);
    let final_eoc_p = levels.last().and_then(|l| l.eoc_p);
    let rate_target_met = if cfg.mu < lambda {
        Some(match (final_eoc_u, final_eoc_p) {
            (Some(u), Some(p)) => u >= 0.9 && p >= 1.0,
            _ => false,
        })
    } else {
        None
    };
    let passed = !aborted
        && levels.len() == cfg.levels
        && errors_monotone_u
        && errors_monotone_p
        && rate_target_met.unwrap_or(true);
    StudySummary {
        errors_monotone_u,
        errors_monotone_p,
        final_eoc_u,
        final_eoc_p,
        rate_target_met,
        passed,
    }
}

impl StudyReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,h,ndof,err_u_1h,eoc_u,err_p_0,eoc_p,wall_time_s\n");
        for l in &self.levels {
            out.push_str(&format!(
                "{},{},{},{:.6e},{},{:.6e},{},{:.3}\n",
                l.level,
                l.h,
                l.ndof,
                l.err_u_1h,
                l.eoc_u.map_or(String::new(), |e| format!("{:.4}", e)),
                l.err_p_0,
                l.eoc_p.map_or(String::new(), |e| format!("{:.4}", e)),
                l.wall_time_s,
            ));
        }
        out
    }

    /// Markdown table in the benchmark layout:
    /// `ndof | err_u | eoc | err_p | eoc`.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "## {} example {}  (nu = {}, mu = {}, phi = {:?})\n\n",
            self.config.method.label(),
            match self.config.example {
                ExampleKind::Example1 => 1,
                ExampleKind::Example2 => 2,
            },
            self.config.nu,
            self.config.mu,
            self.config.phi_variant,
        ));
        out.push_str("| ndof | err_u_1h | eoc | err_p_0 | eoc |\n");
        out.push_str("|-----:|---------:|----:|--------:|----:|\n");
        for l in &self.levels {
            out.push_str(&format!(
                "| {} | {:.4e} | {} | {:.4e} | {} |\n",
                l.ndof,
                l.err_u_1h,
                l.eoc_u.map_or("-".to_string(), |e| format!("{:.2}", e)),
                l.err_p_0,
                l.eoc_p.map_or("-".to_string(), |e| format!("{:.2}", e)),
            ));
        }
        if let Some(reason) = &self.aborted {
            out.push_str(&format!("\n**aborted**: {}\n", reason));
        }
        out
    }
}

/// Discrete inf-sup constant: the square root of the smallest nonzero
/// eigenvalue of `B A^-1 B^T q = sigma M_p q` on zero-mean pressures, where
/// `A` is the unit-viscosity stiffness on the homogeneous CR space. Computed
/// by inverse power iteration with nested conjugate gradients.
pub fn estimate_infsup(mesh: &TetMesh) -> Result<f64> {
    let dofmap = DofMap::new(mesh);
    let quad = QuadratureConfig {
        base_degree: 2,
        subdivision_levels: 0,
        subdivision_ratio: 0.5,
    };
    let system = StokesSystem::build(
        mesh,
        &dofmap,
        1.0,
        Method::Cr,
        &quad,
        &|_| Ok(Vector3::zeros()),
        None,
    )?;
    let chol = crate::solver::new_scalar_cholesky(&system.a_scalar)?;
    let n_p = mesh.n_tets();
    let vols = &mesh.tet_volumes;
    let volume = mesh.total_volume();

    let apply_s = |q: &[f64]| -> Vec<f64> {
        let bt = system.b.transpose_mul_vec(q);
        let ainv = chol.solve_interleaved(&bt, 3);
        system.b.mul_vec(&ainv)
    };
    let deflate = |q: &mut [f64]| {
        let mean: f64 = q.iter().zip(vols).map(|(x, v)| x * v).sum::<f64>() / volume;
        for x in q.iter_mut() {
            *x -= mean;
        }
    };
    let project = |q: &mut [f64]| {
        let mean: f64 = q.iter().sum::<f64>() / q.len() as f64;
        for x in q.iter_mut() {
            *x -= mean;
        }
    };
    let m_norm =
        |q: &[f64]| -> f64 { q.iter().zip(vols).map(|(x, v)| x * x * v).sum::<f64>().sqrt() };

    // Inner CG on S with the mass preconditioner.
    let solve_s = |rhs: &[f64]| -> Result<Vec<f64>> {
        let mut x = vec![0.0; n_p];
        let mut r = rhs.to_vec();
        project(&mut r);
        let rhs_norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rhs_norm == 0.0 {
            return Ok(x);
        }
        let precond = |r: &[f64]| -> Vec<f64> { r.iter().zip(vols).map(|(x, v)| x / v).collect() };
        let mut z = precond(&r);
        let mut q = z.clone();
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        for _ in 0..20000 {
            let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if rnorm <= 1e-12 * rhs_norm {
                return Ok(x);
            }
            let sq = apply_s(&q);
            let qsq: f64 = q.iter().zip(&sq).map(|(a, b)| a * b).sum();
            if qsq <= 0.0 {
                break;
            }
            let alpha = rz / qsq;
            for i in 0..n_p {
                x[i] += alpha * q[i];
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
        Err(Error::EigenDidNotConverge(
            "inner CG on the Schur complement stalled".into(),
        ))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(91);
    let mut q: Vec<f64> = (0..n_p).map(|_| rng.gen_range(-1.0..1.0)).collect();
    deflate(&mut q);
    let nq = m_norm(&q);
    for x in q.iter_mut() {
        *x /= nq;
    }
    let mut sigma_prev = f64::MAX;
    for _ in 0..300 {
        let mq: Vec<f64> = q.iter().zip(vols).map(|(x, v)| x * v).collect();
        let mut y = solve_s(&mq)?;
        deflate(&mut y);
        // Rayleigh quotient of the pencil: sigma ~ (q, M q) / (q, M y).
        let qmq: f64 = q.iter().zip(vols).zip(q.iter()).map(|((a, v), b)| a * v * b).sum();
        let qmy: f64 = q.iter().zip(vols).zip(y.iter()).map(|((a, v), b)| a * v * b).sum();
        let sigma = qmq / qmy;
        let ny = m_norm(&y);
        if ny == 0.0 {
            return Err(Error::EigenDidNotConverge("iterate collapsed".into()));
        }
        for (x, v) in q.iter_mut().zip(&y) {
            *x = v / ny;
        }
        if (sigma - sigma_prev).abs() <= 1e-10 * sigma.abs() {
            return Ok(sigma.sqrt());
        }
        sigma_prev = sigma;
    }
    Err(Error::EigenDidNotConverge(
        "inverse iteration did not settle".into(),
    ))
}

/// Solves the homogeneous problem with a smooth divergence-free load `f0`,
/// then with `f0 + grad_phi`, and reports the maximum relative velocity-dof
/// deviation. Pressure-robust methods are invariant up to solver tolerance.
pub fn gradient_invariance_test(
    mesh: &TetMesh,
    method: Method,
    grad_phi: &(dyn Fn(&Point3<f64>) -> Result<Vector3<f64>> + Sync),
    quad: &QuadratureConfig,
    solver_tol: f64,
) -> Result<f64> {
    let dofmap = DofMap::new(mesh);
    let f0 = |p: &Point3<f64>| Ok(Vector3::new(p.y, p.z, p.x));
    let f1 = |p: &Point3<f64>| Ok(Vector3::new(p.y, p.z, p.x) + grad_phi(p)?);
    let solve_with = |f: &(dyn Fn(&Point3<f64>) -> Result<Vector3<f64>> + Sync)| {
        let system = StokesSystem::build(mesh, &dofmap, 1.0, method, quad, f, None)?;
        let (u, _, _) = solve(&system, solver_tol, 10000)?;
        Ok::<_, Error>(u)
    };
    let u0 = solve_with(&f0)?;
    let u1 = solve_with(&f1)?;
    let scale = u0
        .coeffs
        .iter()
        .fold(0.0f64, |m, &c| m.max(c.abs()))
        .max(1e-300);
    let mut worst = 0.0f64;
    for i in 0..u0.coeffs.len() {
        worst = worst.max((u0.coeffs[i] - u1.coeffs[i]).abs() / scale);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eoc_reproduces_benchmark_table_values() {
        let ndofs = [894usize, 4137, 25650, 155364, 1376733];
        let err_u = [0.69908, 0.48222, 0.29154, 0.16660, 0.082279];
        let err_p = [0.71907, 0.43157, 0.21233, 0.099137, 0.044658];
        let expect_u = [0.73, 0.83, 0.93, 0.97];
        let expect_p = [1.00, 1.17, 1.27, 1.10];
        let eoc_u = compute_eoc(&err_u, &ndofs).unwrap();
        let eoc_p = compute_eoc(&err_p, &ndofs).unwrap();
        for k in 0..4 {
            assert!(
                (eoc_u[k] - expect_u[k]).abs() <= 0.005,
                "velocity eoc {}: {} vs {}",
                k,
                eoc_u[k],
                expect_u[k]
            );
            assert!(
                (eoc_p[k] - expect_p[k]).abs() <= 0.005,
                "pressure eoc {}: {} vs {}",
                k,
                eoc_p[k],
                expect_p[k]
            );
        }
    }

    #[test]
    fn eoc_of_exact_halving_is_one() {
        let eoc = compute_eoc(&[1.0, 0.5], &[1000, 8000]).unwrap();
        assert!((eoc[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn eoc_rejects_nonpositive_errors() {
        assert!(compute_eoc(&[1.0, 0.0], &[10, 80]).is_err());
        assert!(compute_eoc(&[1.0], &[10]).is_err());
    }

    fn mesh_for(h: f64, mu: f64) -> TetMesh {
        build_tet_mesh(&GradingConfig::new(h, mu)).unwrap()
    }

    #[test]
    fn velocity_error_of_exact_cr_interpolant_is_zero() {
        let mesh = mesh_for(0.5, 0.4);
        let grad = Matrix3::new(0.0, 1.0, 0.5, -1.0, 0.2, 0.0, 0.3, 0.0, -0.2);
        let field = |p: &Point3<f64>| {
            Vector3::new(
                p.y + 0.5 * p.z,
                -p.x + 0.2 * p.y,
                0.3 * p.x - 0.2 * p.z,
            )
        };
        let mut u = VelocityField::zeros(mesh.n_facets());
        for (i, facet) in mesh.facets.iter().enumerate() {
            u.set_facet_value(i, &field(&facet.barycenter));
        }
        let err =
            error_velocity_h1_with(&mesh, &u, &|_| Ok(grad), &QuadratureConfig::default()).unwrap();
        assert!(err <= 1e-12, "error {}", err);
    }

    #[test]
    fn zero_field_error_is_the_exact_seminorm() {
        // ||grad u||_0 of the singular solution must be level-independent.
        let case = ExactCase::example1(1.0, 1.5 * std::f64::consts::PI).unwrap();
        let quad = QuadratureConfig::default();
        let mut norms = Vec::new();
        for h in [0.5, 0.25] {
            let mesh = mesh_for(h, 0.4);
            let zero = VelocityField::zeros(mesh.n_facets());
            norms.push(error_velocity_h1(&mesh, &zero, &case, &quad).unwrap());
        }
        assert!(norms[0].is_finite() && norms[0] > 0.0);
        assert!(
            (norms[0] - norms[1]).abs() / norms[0] < 1e-3,
            "seminorm not level-independent: {:?}",
            norms
        );
    }

    #[test]
    fn pressure_error_invariant_under_constant_shift() {
        let mesh = mesh_for(0.5, 0.4);
        let case = ExactCase::example1(1.0, 1.5 * std::f64::consts::PI).unwrap();
        let quad = QuadratureConfig::default();
        let mut p1 = PressureField::zeros(mesh.n_tets());
        for (t, c) in p1.coeffs.iter_mut().enumerate() {
            *c = (t as f64 * 0.37).sin();
        }
        let mut p2 = p1.clone();
        for c in p2.coeffs.iter_mut() {
            *c += 123.456;
        }
        let e1 = error_pressure_l2(&mesh, &p1, &case, &quad).unwrap();
        let e2 = error_pressure_l2(&mesh, &p2, &case, &quad).unwrap();
        assert!((e1 - e2).abs() <= 1e-12 * e1);
    }

    #[test]
    fn elementwise_mean_pressure_is_best_approximation() {
        let mesh = mesh_for(0.5, 0.4);
        let case = ExactCase::example1(1.0, 1.5 * std::f64::consts::PI).unwrap();
        let quad = QuadratureConfig::default();
        let rule = tet_rule(quad.base_degree);
        let mut means = PressureField::zeros(mesh.n_tets());
        for t in 0..mesh.n_tets() {
            let geom = TetGeom::for_tet(&mesh, t).unwrap();
            let mut s = 0.0;
            integrate_tet(&geom.verts, mesh.axis_touch(t), &quad, &rule, &mut |x, w| {
                s += w * case.pressure(x).unwrap()
            });
            means.coeffs[t] = s / mesh.tet_volumes[t];
        }
        let best = error_pressure_l2(&mesh, &means, &case, &quad).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let mut perturbed = means.clone();
            for c in perturbed.coeffs.iter_mut() {
                *c += rng.gen_range(-0.05..0.05);
            }
            let e = error_pressure_l2(&mesh, &perturbed, &case, &quad).unwrap();
            assert!(
                e >= best - 1e-12,
                "perturbation beat the L2 projection: {} < {}",
                e,
                best
            );
        }
    }

    #[test]
    fn infsup_positive_and_scale_invariant() {
        let mesh = mesh_for(0.5, 0.4);
        let beta = estimate_infsup(&mesh).unwrap();
        assert!(beta > 0.0, "inf-sup constant must be positive");

        // Uniform coordinate scaling by 2 leaves the constant unchanged.
        let scaled = TetMesh::from_cells(
            mesh.vertices.iter().map(|v| v * 2.0).collect(),
            mesh.tets.clone(),
        )
        .unwrap();
        let beta_scaled = estimate_infsup(&scaled).unwrap();
        assert!(
            (beta - beta_scaled).abs() <= 1e-6 * beta,
            "beta {} vs scaled {}",
            beta,
            beta_scaled
        );
    }

    #[test]
    fn infsup_stable_across_graded_levels() {
        let mut betas = Vec::new();
        for h in [0.5, 0.35, 0.25] {
            let mesh = mesh_for(h, 0.4);
            betas.push(estimate_infsup(&mesh).unwrap());
        }
        let max = betas.iter().fold(0.0f64, |m, &b| m.max(b));
        let min = betas.iter().fold(f64::MAX, |m, &b| m.min(b));
        assert!(
            min >= 0.5 * max,
            "inf-sup degenerates with grading: {:?}",
            betas
        );
    }

    #[test]
    fn invariance_constant_phi_is_exactly_zero() {
        let mesh = mesh_for(0.5, 0.4);
        let quad = QuadratureConfig::default();
        for method in [Method::Cr, Method::CrRt, Method::CrBdm] {
            let dev =
                gradient_invariance_test(&mesh, method, &|_| Ok(Vector3::zeros()), &quad, 1e-10)
                    .unwrap();
            assert!(dev <= 1e-12, "{:?}: deviation {}", method, dev);
        }
    }

    #[test]
    fn invariance_quadratic_phi_separates_methods() {
        let mesh = mesh_for(0.5, 0.4);
        let quad = QuadratureConfig::default();
        let grad_phi = |p: &Point3<f64>| Ok(Vector3::new(2.0 * p.x, 2.0 * p.y, 0.0));
        let dev_cr = gradient_invariance_test(&mesh, Method::Cr, &grad_phi, &quad, 1e-10).unwrap();
        let dev_rt =
            gradient_invariance_test(&mesh, Method::CrRt, &grad_phi, &quad, 1e-10).unwrap();
        let dev_bdm =
            gradient_invariance_test(&mesh, Method::CrBdm, &grad_phi, &quad, 1e-10).unwrap();
        assert!(dev_cr >= 1e-3, "CR deviation {}", dev_cr);
        assert!(dev_rt <= 1e-9, "CR-RT deviation {}", dev_rt);
        assert!(dev_bdm <= 1e-9, "CR-BDM deviation {}", dev_bdm);
    }

    #[test]
    fn study_config_validation() {
        let mut cfg = StudyConfig::new(ExampleKind::Example1, Method::CrRt);
        assert!(cfg.validate().is_ok());
        cfg.levels = 1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn report_serialization_shapes() {
        let cfg = StudyConfig::new(ExampleKind::Example1, Method::Cr);
        let report = StudyReport {
            config: cfg,
            lambda: 0.544,
            levels: vec![],
            aborted: None,
            summary: StudySummary {
                errors_monotone_u: true,
                errors_monotone_p: true,
                final_eoc_u: None,
                final_eoc_p: None,
                rate_target_met: None,
                passed: false,
            },
        };
        let json = report.to_json();
        assert!(json.contains("\"lambda\""));
        let md = report.to_markdown();
        assert!(md.contains("| ndof |"));
        let csv = report.to_csv();
        assert!(csv.starts_with("level,h,ndof"));
    }
}
