use nalgebra::Point3;
use prstokes::exact::ExactCase;
use prstokes::fem::quadrature::QuadratureConfig;
use prstokes::fem::{DofMap, Method};
use prstokes::mesh::{build_tet_mesh, mesh_quality, GradingConfig};
use prstokes::solver::StokesSystem;
use rand::{Rng, SeedableRng};

fn main() {
    let mut cfg = GradingConfig::new(0.1, 0.4);
    cfg.omega = 1.5 * std::f64::consts::PI;
    let mesh = build_tet_mesh(&cfg).unwrap();
    let q = mesh_quality(&mesh, &cfg);
    println!("tets {}, min vol {:.3e}, min extent {:.3e}, max dih {:.3}", q.n_tets, q.min_volume, q.min_extent, q.max_dihedral_angle);
    let dofs = DofMap::new(&mesh);
    println!("free facets {}, n_p {}", dofs.n_free_facets(), dofs.n_p());

    let case = ExactCase::example1(1.0, cfg.omega).unwrap();
    let quad = QuadratureConfig::default();
    let f = |p: &Point3<f64>| case.data_f(p);
    let g = |p: &Point3<f64>| case.velocity(p);
    let system = StokesSystem::build(&mesh, &dofs, 1.0, Method::CrRt, &quad, &f, Some(&g)).unwrap();
    // check for NaN
    let bad_rhs = system.rhs_u.iter().filter(|v| !v.is_finite()).count();
    let bad_a = system.a_scalar.data.iter().filter(|v| !v.is_finite()).count();
    let bad_b = system.b.data.iter().filter(|v| !v.is_finite()).count();
    println!("non-finite: rhs {} a {} b {}", bad_rhs, bad_a, bad_b);
    let amax = system.a_scalar.max_abs();
    let amin_diag = (0..system.a_scalar.nrows).map(|i| system.a_scalar.get(i, i)).fold(f64::MAX, f64::min);
    println!("A max {:.3e}, min diag {:.3e}", amax, amin_diag);

    // Cholesky residual probe
    let chol = prstokes::solver::debug_cholesky(&system.a_scalar).unwrap();
    let n = system.a_scalar.nrows;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
    let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0f64..1.0)).collect();
    let x = chol.solve1(&b);
    let ax = system.a_scalar.mul_vec(&x);
    let res: f64 = ax.iter().zip(&b).map(|(a, c)| (a - c) * (a - c)).sum::<f64>().sqrt();
    let bn: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    println!("cholesky relative residual {:.3e}", res / bn);

    // Run CG manually with trace
    prstokes::solver::debug_schur_cg_trace(&system, 2000);
}
