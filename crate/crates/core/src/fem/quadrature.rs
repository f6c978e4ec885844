//! Quadrature on tetrahedra and triangles.
//!
//! Rules of arbitrary polynomial exactness are generated as conical products
//! of 1D Gauss-Jacobi rules (positive weights, strictly interior points).
//! Tets touching the singular z-axis are geometrically subdivided towards the
//! axis before the base rule is applied, so integrands like `r^(lambda-1)`
//! are resolved and no quadrature node ever lands on `r = 0`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, Point3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::AxisTouch;

/// Accuracy knobs for all singular integrals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadratureConfig {
    /// Polynomial exactness degree of the base rule.
    pub base_degree: usize,
    /// Geometric subdivision depth for tets touching the z-axis.
    pub subdivision_levels: usize,
    /// Contraction ratio towards the axis per level.
    pub subdivision_ratio: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            base_degree: 8,
            subdivision_levels: 4,
            subdivision_ratio: 0.5,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_degree < 2 {
            return Err(Error::InvalidConfig(format!(
                "quadrature degree {} < 2",
                self.base_degree
            )));
        }
        if !(self.subdivision_ratio > 0.0 && self.subdivision_ratio < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "subdivision ratio {} not in (0, 1)",
                self.subdivision_ratio
            )));
        }
        Ok(())
    }

    /// A copy with the effort bumped by `degree_extra` and `level_extra`,
    /// used by quadrature-refinement oracles.
    pub fn refined(&self, degree_extra: usize, level_extra: usize) -> Self {
        Self {
            base_degree: self.base_degree + degree_extra,
            subdivision_levels: self.subdivision_levels + level_extra,
            subdivision_ratio: self.subdivision_ratio,
        }
    }
}

/// Nodes (barycentric) and weights (summing to one) on the reference tet.
#[derive(Debug, Clone)]
pub struct TetRule {
    pub bary: Vec<[f64; 4]>,
    pub weights: Vec<f64>,
}

/// Nodes (barycentric) and weights (summing to one) on the reference triangle.
#[derive(Debug, Clone)]
pub struct TriRule {
    pub bary: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

/// Gauss nodes and weights on [0, 1] for the weight function `(1-t)^alpha`,
/// via Golub-Welsch on the Jacobi recurrence.
fn gauss_jacobi_01(n: usize, alpha: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let alpha = alpha as f64;
    let mut diag = vec![0.0f64; n];
    let mut off = vec![0.0f64; n.saturating_sub(1)];
    // Recurrence for P^(alpha, 0) on [-1, 1].
    diag[0] = -alpha / (alpha + 2.0);
    for k in 1..n {
        let kk = k as f64;
        diag[k] = -(alpha * alpha) / ((2.0 * kk + alpha) * (2.0 * kk + alpha + 2.0));
    }
    for k in 1..n {
        let kk = k as f64;
        let b = 4.0 * kk * kk * (kk + alpha) * (kk + alpha)
            / ((2.0 * kk + alpha) * (2.0 * kk + alpha) * (2.0 * kk + alpha + 1.0)
                * (2.0 * kk + alpha - 1.0));
        off[k - 1] = b.sqrt();
    }
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        jac[(i, i)] = diag[i];
        if i + 1 < n {
            jac[(i, i + 1)] = off[i];
            jac[(i + 1, i)] = off[i];
        }
    }
    let eig = nalgebra::SymmetricEigen::new(jac);
    let mu0 = 2.0f64.powf(alpha + 1.0) / (alpha + 1.0);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let x = eig.eigenvalues[i];
            let w = mu0 * eig.eigenvectors[(0, i)] * eig.eigenvectors[(0, i)];
            // Map [-1, 1] -> [0, 1] with the weight function scaling.
            ((x + 1.0) * 0.5, w * 0.5f64.powf(alpha + 1.0))
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

fn points_for_degree(degree: usize) -> usize {
    degree / 2 + 1
}

fn build_tet_rule(degree: usize) -> TetRule {
    let n = points_for_degree(degree);
    let (u, wu) = gauss_jacobi_01(n, 2);
    let (v, wv) = gauss_jacobi_01(n, 1);
    let (w, ww) = gauss_jacobi_01(n, 0);
    let mut bary = Vec::with_capacity(n * n * n);
    let mut weights = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let x = u[i];
                let y = v[j] * (1.0 - u[i]);
                let z = w[k] * (1.0 - u[i]) * (1.0 - v[j]);
                bary.push([1.0 - x - y - z, x, y, z]);
                // The conical weights sum to the reference volume 1/6.
                weights.push(6.0 * wu[i] * wv[j] * ww[k]);
            }
        }
    }
    TetRule { bary, weights }
}

fn build_tri_rule(degree: usize) -> TriRule {
    let n = points_for_degree(degree);
    let (u, wu) = gauss_jacobi_01(n, 1);
    let (v, wv) = gauss_jacobi_01(n, 0);
    let mut bary = Vec::with_capacity(n * n);
    let mut weights = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let x = u[i];
            let y = v[j] * (1.0 - u[i]);
            bary.push([1.0 - x - y, x, y]);
            weights.push(2.0 * wu[i] * wv[j]);
        }
    }
    TriRule { bary, weights }
}

pub fn tet_rule(degree: usize) -> Arc<TetRule> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<TetRule>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap();
    guard
        .entry(degree)
        .or_insert_with(|| Arc::new(build_tet_rule(degree)))
        .clone()
}

pub fn tri_rule(degree: usize) -> Arc<TriRule> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<TriRule>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap();
    guard
        .entry(degree)
        .or_insert_with(|| Arc::new(build_tri_rule(degree)))
        .clone()
}

type P3 = Point3<f64>;

fn tet_volume(v: &[P3; 4]) -> f64 {
    ((v[1] - v[0]).cross(&(v[2] - v[0])).dot(&(v[3] - v[0])) / 6.0).abs()
}

fn emit_tet(rule: &TetRule, v: &[P3; 4], f: &mut impl FnMut(&P3, f64)) {
    let vol = tet_volume(v);
    for (b, &w) in rule.bary.iter().zip(&rule.weights) {
        let x = Point3::from(
            v[0].coords * b[0] + v[1].coords * b[1] + v[2].coords * b[2] + v[3].coords * b[3],
        );
        f(&x, w * vol);
    }
}

/// Prism with triangle ends `a` and `b`, vertical edges `a[i]-b[i]`;
/// all faces planar. Decomposed into three tets.
fn emit_prism(rule: &TetRule, a: &[P3; 3], b: &[P3; 3], f: &mut impl FnMut(&P3, f64)) {
    emit_tet(rule, &[a[0], a[1], a[2], b[0]], f);
    emit_tet(rule, &[a[1], a[2], b[0], b[1]], f);
    emit_tet(rule, &[a[2], b[0], b[1], b[2]], f);
}

/// Convex hexahedron with planar faces, corners `outer` and `inner` matching
/// cyclically. Fanned into six tets from `inner[0]`.
fn emit_hex(rule: &TetRule, outer: &[P3; 4], inner: &[P3; 4], f: &mut impl FnMut(&P3, f64)) {
    let apex = inner[0];
    let (a, b, c, d) = (outer[0], outer[1], outer[2], outer[3]);
    let (bp, cp, dp) = (inner[1], inner[2], inner[3]);
    emit_tet(rule, &[a, b, c, apex], f);
    emit_tet(rule, &[a, c, d, apex], f);
    emit_tet(rule, &[b, c, cp, apex], f);
    emit_tet(rule, &[b, cp, bp, apex], f);
    emit_tet(rule, &[c, d, dp, apex], f);
    emit_tet(rule, &[c, dp, cp, apex], f);
}

fn lerp(a: &P3, b: &P3, t: f64) -> P3 {
    Point3::from(a.coords * (1.0 - t) + b.coords * t)
}

/// Visits quadrature points of one tet with physical weights. Tets touching
/// the axis are split into layers contracting geometrically towards the
/// singular set before the base rule is applied.
pub fn integrate_tet(
    verts: &[P3; 4],
    touch: AxisTouch,
    cfg: &QuadratureConfig,
    rule: &TetRule,
    f: &mut impl FnMut(&P3, f64),
) {
    let levels = cfg.subdivision_levels;
    match touch {
        AxisTouch::None => emit_tet(rule, verts, f),
        _ if levels == 0 => emit_tet(rule, verts, f),
        AxisTouch::Vertex(i0) => {
            let a = verts[i0];
            let others: Vec<P3> = (0..4).filter(|&i| i != i0).map(|i| verts[i]).collect();
            let cut = |t: f64| -> [P3; 3] {
                [
                    lerp(&a, &others[0], t),
                    lerp(&a, &others[1], t),
                    lerp(&a, &others[2], t),
                ]
            };
            let mut t_outer = 1.0;
            for _ in 0..levels {
                let t_inner = t_outer * cfg.subdivision_ratio;
                emit_prism(rule, &cut(t_inner), &cut(t_outer), f);
                t_outer = t_inner;
            }
            let core = cut(t_outer);
            emit_tet(rule, &[a, core[0], core[1], core[2]], f);
        }
        AxisTouch::Edge(i0, i1) => {
            let a0 = verts[i0];
            let a1 = verts[i1];
            let mut it = (0..4).filter(|&i| i != i0 && i != i1);
            let c = verts[it.next().unwrap()];
            let d = verts[it.next().unwrap()];
            // Cut polygon at level t: parallelogram A B C D with
            // A, B near a0 and D, C near a1.
            let cut = |t: f64| -> [P3; 4] {
                [
                    lerp(&a0, &c, t),
                    lerp(&a0, &d, t),
                    lerp(&a1, &d, t),
                    lerp(&a1, &c, t),
                ]
            };
            let t1 = cfg.subdivision_ratio;
            let c1 = cut(t1);
            // Far piece {s >= t1}: prism with triangle ends around c and d.
            emit_prism(rule, &[c, c1[0], c1[3]], &[d, c1[1], c1[2]], f);
            let mut t_outer = t1;
            for _ in 1..levels {
                let t_inner = t_outer * cfg.subdivision_ratio;
                emit_hex(rule, &cut(t_outer), &cut(t_inner), f);
                t_outer = t_inner;
            }
            // Core wedge {s <= t_last}: prism with triangle ends at a0 and a1.
            let cl = cut(t_outer);
            emit_prism(rule, &[a0, cl[0], cl[1]], &[a1, cl[3], cl[2]], f);
        }
    }
}

/// Visits quadrature points of a triangle with physical weights.
pub fn integrate_triangle(verts: &[P3; 3], rule: &TriRule, f: &mut impl FnMut(&P3, f64)) {
    let area = 0.5 * (verts[1] - verts[0]).cross(&(verts[2] - verts[0])).norm();
    for (b, &w) in rule.bary.iter().zip(&rule.weights) {
        let x = Point3::from(verts[0].coords * b[0] + verts[1].coords * b[1] + verts[2].coords * b[2]);
        f(&x, w * area);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: usize) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }

    #[test]
    fn gauss_legendre_nodes_match_known_values() {
        let (x, w) = gauss_jacobi_01(2, 0);
        // Two-point Gauss-Legendre on [0, 1].
        let d = 0.5 / 3.0f64.sqrt();
        assert!((x[0] - (0.5 - d)).abs() < 1e-14);
        assert!((x[1] - (0.5 + d)).abs() < 1e-14);
        assert!((w[0] - 0.5).abs() < 1e-14);
        assert!((w[1] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn tet_rule_exact_for_monomials() {
        // Reference integral of x^a y^b z^c over the unit tet.
        let exact = |a: usize, b: usize, c: usize| {
            factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 3)
        };
        for degree in [2, 4, 8, 10] {
            let rule = tet_rule(degree);
            assert!((rule.weights.iter().sum::<f64>() - 1.0).abs() < 1e-13);
            assert!(rule.weights.iter().all(|&w| w > 0.0));
            for a in 0..=degree {
                for b in 0..=(degree - a) {
                    for c in 0..=(degree - a - b) {
                        let mut q = 0.0;
                        for (bary, &w) in rule.bary.iter().zip(&rule.weights) {
                            let (x, y, z) = (bary[1], bary[2], bary[3]);
                            q += w / 6.0 * x.powi(a as i32) * y.powi(b as i32) * z.powi(c as i32);
                        }
                        let e = exact(a, b, c);
                        assert!(
                            (q - e).abs() <= 1e-13 * e.max(1.0),
                            "degree {} monomial ({},{},{}): {} vs {}",
                            degree,
                            a,
                            b,
                            c,
                            q,
                            e
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn tri_rule_exact_for_monomials() {
        let exact = |a: usize, b: usize| factorial(a) * factorial(b) / factorial(a + b + 2);
        for degree in [2, 4, 6] {
            let rule = tri_rule(degree);
            assert!((rule.weights.iter().sum::<f64>() - 1.0).abs() < 1e-13);
            for a in 0..=degree {
                for b in 0..=(degree - a) {
                    let mut q = 0.0;
                    for (bary, &w) in rule.bary.iter().zip(&rule.weights) {
                        q += w / 2.0 * bary[1].powi(a as i32) * bary[2].powi(b as i32);
                    }
                    let e = exact(a, b);
                    assert!((q - e).abs() <= 1e-13 * e.max(1.0));
                }
            }
        }
    }

    fn unit_tet() -> [P3; 4] {
        [
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(0.0, 0.0, 1.0),
        ]
    }

    #[test]
    fn subdivision_partitions_the_tet() {
        // Integrating 1 must give the volume regardless of the splitting.
        let cfg = QuadratureConfig::default();
        let rule = tet_rule(4);
        for touch in [
            AxisTouch::None,
            AxisTouch::Vertex(0),
            AxisTouch::Vertex(2),
            AxisTouch::Edge(0, 3),
            AxisTouch::Edge(1, 2),
        ] {
            let mut vol = 0.0;
            integrate_tet(&unit_tet(), touch, &cfg, &rule, &mut |_, w| vol += w);
            assert!(
                (vol - 1.0 / 6.0).abs() < 1e-13,
                "volume {} for {:?}",
                vol,
                touch
            );
        }
    }

    #[test]
    fn subdivision_preserves_polynomial_integrals() {
        // x^2 y z over the unit tet = 2/5040.
        let cfg = QuadratureConfig::default();
        let rule = tet_rule(6);
        let exact = 2.0 / factorial(7);
        for touch in [AxisTouch::Vertex(0), AxisTouch::Edge(0, 3), AxisTouch::Edge(2, 3)] {
            let mut q = 0.0;
            integrate_tet(&unit_tet(), touch, &cfg, &rule, &mut |p, w| {
                q += w * p.x * p.x * p.y * p.z
            });
            assert!((q - exact).abs() < 1e-14, "{:?}: {} vs {}", touch, q, exact);
        }
    }

    #[test]
    fn subdivision_resolves_radial_singularity() {
        // The unresolved slab of width delta = ratio^levels next to the axis
        // contributes an error of order delta^(a+2) for an integrand r^a, so
        // r^(lambda-1) converges fast while r^(lambda-2) (data outside L^2)
        // needs deep subdivision. Check both against a converged reference.
        let lam = 0.5444837367825445f64;
        let verts = [
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(0.0, 0.0, 1.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 1.0),
        ];
        let touch = AxisTouch::Edge(0, 1);
        let quad_with = |cfg: &QuadratureConfig, a: f64| {
            let rule = tet_rule(cfg.base_degree);
            let mut q = 0.0;
            integrate_tet(&verts, touch, cfg, &rule, &mut |p, w| {
                q += w * p.x.hypot(p.y).powf(a)
            });
            q
        };
        let reference_cfg = QuadratureConfig {
            base_degree: 12,
            subdivision_levels: 60,
            subdivision_ratio: 0.5,
        };

        // f in L^2 regime: default effort resolves it to a fraction of a percent.
        let a1 = lam - 1.0;
        let ref1 = quad_with(&reference_cfg, a1);
        let err_default = (quad_with(&QuadratureConfig::default(), a1) - ref1).abs() / ref1;
        let no_subdiv = QuadratureConfig {
            subdivision_levels: 0,
            ..QuadratureConfig::default()
        };
        let err_plain = (quad_with(&no_subdiv, a1) - ref1).abs() / ref1;
        assert!(err_default < 2e-3, "subdivided error {}", err_default);
        assert!(
            err_plain > 5.0 * err_default,
            "subdivision should clearly beat the plain rule: {} vs {}",
            err_plain,
            err_default
        );

        // Best-effort regime r^(lambda-2): deep subdivision reaches ~1e-7.
        let a2 = lam - 2.0;
        let ref2 = quad_with(&reference_cfg, a2);
        let deep = QuadratureConfig {
            base_degree: 12,
            subdivision_levels: 40,
            subdivision_ratio: 0.5,
        };
        let err_deep = (quad_with(&deep, a2) - ref2).abs() / ref2;
        assert!(err_deep < 1e-6, "deep subdivision error {}", err_deep);
    }

    #[test]
    fn triangle_integration_matches_area() {
        let tri = [
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(2.0, 0.0, 0.0),
            Point3::new(0.0, 0.0, 3.0),
        ];
        let rule = tri_rule(4);
        let mut area = 0.0;
        integrate_triangle(&tri, &rule, &mut |_, w| area += w);
        assert!((area - 3.0).abs() < 1e-13);
    }

    #[test]
    fn config_validation() {
        assert!(QuadratureConfig::default().validate().is_ok());
        let bad = QuadratureConfig {
            base_degree: 1,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad_ratio = QuadratureConfig {
            subdivision_ratio: 1.0,
            ..Default::default()
        };
        assert!(bad_ratio.validate().is_err());
    }
}
