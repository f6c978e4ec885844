use prstokes::exact::ExampleKind;
use prstokes::fem::Method;
use prstokes::study::{run_study, StudyConfig};

fn main() {
    let t0 = std::time::Instant::now();
    for (mu, h0) in [(0.4f64, 0.8f64), (1.0, 0.8)] {
        let mut cfg = StudyConfig::new(ExampleKind::Example1, Method::CrRt);
        cfg.mu = mu;
        cfg.h0 = h0;
        cfg.levels = 4;
        let report = run_study(&cfg).unwrap();
        println!("=== mu = {} (lambda = {:.5})", mu, report.lambda);
        println!("{}", report.to_markdown());
        for l in &report.levels {
            println!(
                "level {}: ndof {:>7}  cg {}  mom {:.1e} cont {:.1e}  {:.1}s",
                l.level, l.ndof, l.solve.cg_iterations, l.solve.momentum_residual,
                l.solve.continuity_residual, l.wall_time_s
            );
        }
        if let Some(a) = &report.aborted { println!("ABORTED: {}", a); }
    }
    println!("total {:.1}s", t0.elapsed().as_secs_f64());
}
