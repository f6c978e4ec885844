//! Per-tet geometry: barycentric coordinates and Crouzeix-Raviart shape
//! functions `theta_i = 1 - 3 lambda_i`, which equal one at the barycenter of
//! facet `i` (opposite vertex `i`) and zero at the other facet barycenters.

use nalgebra::{Matrix3, Point3, Vector3};

use crate::error::{Error, Result};
use crate::mesh::TetMesh;

#[derive(Debug, Clone)]
pub struct TetGeom {
    pub verts: [Point3<f64>; 4],
    pub volume: f64,
    /// Gradients of the barycentric coordinates.
    pub grad_lambda: [Vector3<f64>; 4],
}

impl TetGeom {
    pub fn new(verts: [Point3<f64>; 4]) -> Result<Self> {
        let e = Matrix3::from_columns(&[
            verts[1] - verts[0],
            verts[2] - verts[0],
            verts[3] - verts[0],
        ]);
        let det = e.determinant();
        if det <= 0.0 {
            return Err(Error::DegenerateElement(format!(
                "tet with signed volume {}",
                det / 6.0
            )));
        }
        let inv = e.try_inverse().ok_or_else(|| {
            Error::DegenerateElement("tet edge matrix not invertible".into())
        })?;
        let g1 = Vector3::new(inv[(0, 0)], inv[(0, 1)], inv[(0, 2)]);
        let g2 = Vector3::new(inv[(1, 0)], inv[(1, 1)], inv[(1, 2)]);
        let g3 = Vector3::new(inv[(2, 0)], inv[(2, 1)], inv[(2, 2)]);
        Ok(Self {
            verts,
            volume: det / 6.0,
            grad_lambda: [-(g1 + g2 + g3), g1, g2, g3],
        })
    }

    pub fn for_tet(mesh: &TetMesh, t: usize) -> Result<Self> {
        Self::new(mesh.tet_vertices(t))
    }

    pub fn barycentric(&self, p: &Point3<f64>) -> [f64; 4] {
        let d = p - self.verts[0];
        let l1 = self.grad_lambda[1].dot(&d);
        let l2 = self.grad_lambda[2].dot(&d);
        let l3 = self.grad_lambda[3].dot(&d);
        [1.0 - l1 - l2 - l3, l1, l2, l3]
    }

    /// CR shape functions at a point; `cr[i]` belongs to the facet opposite
    /// local vertex `i`.
    pub fn cr_basis(&self, p: &Point3<f64>) -> [f64; 4] {
        let l = self.barycentric(p);
        [
            1.0 - 3.0 * l[0],
            1.0 - 3.0 * l[1],
            1.0 - 3.0 * l[2],
            1.0 - 3.0 * l[3],
        ]
    }

    /// Constant CR shape gradients, `grad theta_i = -3 grad lambda_i`.
    pub fn cr_gradients(&self) -> [Vector3<f64>; 4] {
        [
            -3.0 * self.grad_lambda[0],
            -3.0 * self.grad_lambda[1],
            -3.0 * self.grad_lambda[2],
            -3.0 * self.grad_lambda[3],
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_tet() -> TetGeom {
        TetGeom::new([
            Point3::new(0.1, 0.2, 0.0),
            Point3::new(1.3, 0.1, 0.2),
            Point3::new(0.2, 1.1, -0.1),
            Point3::new(0.4, 0.3, 1.5),
        ])
        .unwrap()
    }

    fn facet_barycenter(g: &TetGeom, opposite: usize) -> Point3<f64> {
        let mut acc = Vector3::zeros();
        for i in 0..4 {
            if i != opposite {
                acc += g.verts[i].coords;
            }
        }
        Point3::from(acc / 3.0)
    }

    #[test]
    fn cr_basis_is_one_at_own_facet_barycenter() {
        let g = sample_tet();
        for i in 0..4 {
            let theta = g.cr_basis(&facet_barycenter(&g, i));
            for j in 0..4 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((theta[j] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cr_basis_is_minus_two_at_opposite_vertex() {
        let g = sample_tet();
        for i in 0..4 {
            let theta = g.cr_basis(&g.verts[i]);
            assert!((theta[i] - (-2.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn cr_basis_partition_sums_to_one() {
        let g = sample_tet();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            // Random point inside via random barycentric weights.
            let mut w = [0.0f64; 4];
            let mut s = 0.0;
            for x in w.iter_mut() {
                *x = rng.gen_range(0.01..1.0);
                s += *x;
            }
            let p = Point3::from(
                (0..4).fold(Vector3::zeros(), |acc, i| acc + g.verts[i].coords * (w[i] / s)),
            );
            let theta = g.cr_basis(&p);
            assert!((theta.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let bary = g.barycentric(&p);
            assert!((bary.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_sum_to_zero() {
        let g = sample_tet();
        let sum = g
            .cr_gradients()
            .iter()
            .fold(Vector3::zeros(), |acc, v| acc + v);
        assert!(sum.norm() < 1e-12);
    }

    #[test]
    fn degenerate_tet_rejected() {
        let flat = TetGeom::new([
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(0.5, 0.5, 0.0),
        ]);
        assert!(flat.is_err());
    }
}
