use std::collections::{BTreeSet, HashMap};

use nalgebra::Point2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::GradingConfig;

/// Marker for the three boundary pieces of the sector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryKind {
    /// Straight side at `phi = 0`.
    SideLow,
    /// Straight side at `phi = omega`.
    SideHigh,
    /// Circular arc at `r = 1`.
    Arc,
}

/// Conforming triangulation of the sector, graded towards the corner.
#[derive(Debug, Clone)]
pub struct Mesh2D {
    pub vertices: Vec<Point2<f64>>,
    /// Vertex index triples, counterclockwise.
    pub triangles: Vec<[usize; 3]>,
    /// Boundary edges (sorted vertex pair) with their marker.
    pub boundary_edges: HashMap<(usize, usize), BoundaryKind>,
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Mesh2D {
    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let (va, vb, vc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        0.5 * ((vb.x - va.x) * (vc.y - va.y) - (vc.x - va.x) * (vb.y - va.y))
    }

    /// Diameter `h_D` of a triangle (longest edge).
    pub fn diameter(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let (va, vb, vc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        let l0 = (vb - va).norm();
        let l1 = (vc - vb).norm();
        let l2 = (va - vc).norm();
        l0.max(l1).max(l2)
    }

    /// Distance `r_D` of a triangle to the corner, as the minimum over its vertices.
    pub fn corner_distance(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        self.vertices[a]
            .coords
            .norm()
            .min(self.vertices[b].coords.norm())
            .min(self.vertices[c].coords.norm())
    }

    /// Edge -> adjacent triangle list, rebuilt from scratch.
    fn edge_adjacency(&self) -> HashMap<(usize, usize), Vec<usize>> {
        let mut map: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            for e in 0..3 {
                let key = edge_key(tri[e], tri[(e + 1) % 3]);
                map.entry(key).or_default().push(t);
            }
        }
        map
    }

    /// Checks that every interior edge is shared by exactly two triangles
    /// and every boundary edge by one.
    pub fn audit_conformity(&self) -> Result<()> {
        for (key, tris) in self.edge_adjacency() {
            let expected = if self.boundary_edges.contains_key(&key) { 1 } else { 2 };
            if tris.len() != expected {
                return Err(Error::DegenerateElement(format!(
                    "edge {:?} shared by {} triangles, expected {}",
                    key,
                    tris.len(),
                    expected
                )));
            }
        }
        Ok(())
    }

    /// Longest edge of a triangle as local index `e` (edge from vertex `e` to `e+1`),
    /// ties broken by the sorted global vertex pair.
    fn longest_edge_local(&self, t: usize) -> usize {
        let tri = self.triangles[t];
        let mut best = 0usize;
        let mut best_measure = (f64::MIN, (0usize, 0usize));
        for e in 0..3 {
            let (a, b) = (tri[e], tri[(e + 1) % 3]);
            let len2 = (self.vertices[b] - self.vertices[a]).norm_squared();
            let measure = (len2, edge_key(a, b));
            if measure > best_measure {
                best_measure = measure;
                best = e;
            }
        }
        best
    }
}

/// Builds the graded triangulation of the sector `{0 < r < 1, 0 < phi < omega}`.
///
/// Starting from a coarse fan around the corner, every triangle violating the
/// size law `h_D <= C * bound(r_D)` is refined by longest-edge bisection
/// (Rivara four-triangle variant) until the law holds everywhere. New vertices
/// produced on the arc are projected back onto it.
pub fn build_sector_mesh_2d(cfg: &GradingConfig) -> Result<Mesh2D> {
    cfg.validate()?;

    // Coarse fan: apex angle at most pi/4 keeps the initial triangles well shaped.
    let n0 = (cfg.omega / (std::f64::consts::PI / 4.0)).ceil() as usize;
    let n0 = n0.max(2);
    let dphi = cfg.omega / n0 as f64;

    let mut vertices = vec![Point2::new(0.0, 0.0)];
    for k in 0..=n0 {
        let phi = k as f64 * dphi;
        vertices.push(Point2::new(phi.cos(), phi.sin()));
    }
    let triangles: Vec<[usize; 3]> = (0..n0).map(|k| [0, k + 1, k + 2]).collect();
    let mut boundary_edges = HashMap::new();
    boundary_edges.insert(edge_key(0, 1), BoundaryKind::SideLow);
    boundary_edges.insert(edge_key(0, n0 + 1), BoundaryKind::SideHigh);
    for k in 0..n0 {
        boundary_edges.insert(edge_key(k + 1, k + 2), BoundaryKind::Arc);
    }

    let mut mesh = Mesh2D {
        vertices,
        triangles,
        boundary_edges,
    };

    loop {
        let marked: Vec<usize> = (0..mesh.n_triangles())
            .filter(|&t| {
                mesh.diameter(t) > cfg.size_constant * cfg.size_bound(mesh.corner_distance(t))
            })
            .collect();
        if marked.is_empty() {
            break;
        }

        // Edges to split: longest edges of marked triangles, closed so that any
        // triangle losing an edge also loses its longest edge.
        let mut split: BTreeSet<(usize, usize)> = BTreeSet::new();
        for &t in &marked {
            let e = mesh.longest_edge_local(t);
            let tri = mesh.triangles[t];
            split.insert(edge_key(tri[e], tri[(e + 1) % 3]));
        }
        loop {
            let mut changed = false;
            for t in 0..mesh.n_triangles() {
                let tri = mesh.triangles[t];
                let has_split = (0..3).any(|e| split.contains(&edge_key(tri[e], tri[(e + 1) % 3])));
                if has_split {
                    let e = mesh.longest_edge_local(t);
                    if split.insert(edge_key(tri[e], tri[(e + 1) % 3])) {
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }

        // Create midpoints; arc midpoints are projected onto the unit circle.
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        for &(a, b) in &split {
            let mut m = nalgebra::center(&mesh.vertices[a], &mesh.vertices[b]);
            let marker = mesh.boundary_edges.get(&(a, b)).copied();
            if marker == Some(BoundaryKind::Arc) {
                m = Point2::from(m.coords / m.coords.norm());
            }
            let id = mesh.vertices.len();
            mesh.vertices.push(m);
            midpoint.insert((a, b), id);
            if let Some(kind) = marker {
                mesh.boundary_edges.remove(&(a, b));
                mesh.boundary_edges.insert(edge_key(a, id), kind);
                mesh.boundary_edges.insert(edge_key(id, b), kind);
            }
        }

        let mid = |a: usize, b: usize| midpoint.get(&edge_key(a, b)).copied();
        let mut next: Vec<[usize; 3]> = Vec::with_capacity(mesh.triangles.len() * 2);
        for t in 0..mesh.n_triangles() {
            let tri = mesh.triangles[t];
            let n_split = (0..3)
                .filter(|&e| split.contains(&edge_key(tri[e], tri[(e + 1) % 3])))
                .count();
            if n_split == 0 {
                next.push(tri);
                continue;
            }
            // Rotate so the longest edge is (a, b); closure guarantees it is split.
            let e = mesh.longest_edge_local(t);
            let (a, b, c) = (tri[e], tri[(e + 1) % 3], tri[(e + 2) % 3]);
            let m = mid(a, b).expect("closure must split the longest edge");
            // Child towards a, possibly bisected again towards the split of (c, a).
            match mid(c, a) {
                Some(p) => {
                    next.push([a, m, p]);
                    next.push([m, c, p]);
                }
                None => next.push([a, m, c]),
            }
            // Child towards b, possibly bisected again towards the split of (b, c).
            match mid(b, c) {
                Some(n) => {
                    next.push([m, b, n]);
                    next.push([m, n, c]);
                }
                None => next.push([m, b, c]),
            }
        }
        mesh.triangles = next;

        if mesh.n_triangles() > cfg.max_triangles_2d {
            return Err(Error::ElementBudgetExceeded {
                budget: cfg.max_triangles_2d,
                reached: mesh.n_triangles(),
            });
        }
    }

    for t in 0..mesh.n_triangles() {
        if mesh.signed_area(t) <= 0.0 {
            return Err(Error::DegenerateElement(format!(
                "triangle {} has non-positive area {}",
                t,
                mesh.signed_area(t)
            )));
        }
    }
    mesh.audit_conformity()?;
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quasi_uniform_sizes_within_band() {
        let cfg = GradingConfig::new(0.25, 1.0);
        let mesh = build_sector_mesh_2d(&cfg).unwrap();
        let bound = cfg.size_constant * 0.25;
        for t in 0..mesh.n_triangles() {
            let d = mesh.diameter(t);
            assert!(d <= bound * (1.0 + 1e-12), "h_D = {} > {}", d, bound);
            assert!(d >= 0.02, "h_D = {} suspiciously small for mu = 1", d);
        }
    }

    #[test]
    fn graded_sizes_at_corner() {
        let cfg = GradingConfig::new(0.25, 0.4);
        let mesh = build_sector_mesh_2d(&cfg).unwrap();
        let corner_bound = cfg.size_constant * 0.25f64.powf(1.0 / 0.4);
        for t in 0..mesh.n_triangles() {
            if mesh.corner_distance(t) == 0.0 {
                assert!(mesh.diameter(t) <= corner_bound * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn size_law_holds_everywhere() {
        for mu in [1.0, 0.4] {
            let cfg = GradingConfig::new(0.25, mu);
            let mesh = build_sector_mesh_2d(&cfg).unwrap();
            for t in 0..mesh.n_triangles() {
                let bound = cfg.size_constant * cfg.size_bound(mesh.corner_distance(t));
                assert!(mesh.diameter(t) <= bound * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn halving_h_quadruples_triangle_count() {
        let coarse = build_sector_mesh_2d(&GradingConfig::new(0.125, 0.4)).unwrap();
        let fine = build_sector_mesh_2d(&GradingConfig::new(0.0625, 0.4)).unwrap();
        let ratio = fine.n_triangles() as f64 / coarse.n_triangles() as f64;
        assert!(
            (3.2..=4.8).contains(&ratio),
            "triangle growth ratio {} outside [3.2, 4.8]",
            ratio
        );
    }

    #[test]
    fn shape_regularity_min_angle_bounded() {
        let cfg = GradingConfig::new(0.125, 0.4);
        let mesh = build_sector_mesh_2d(&cfg).unwrap();
        let mut min_angle = f64::MAX;
        for tri in &mesh.triangles {
            for i in 0..3 {
                let v = mesh.vertices[tri[i]];
                let e1 = (mesh.vertices[tri[(i + 1) % 3]] - v).normalize();
                let e2 = (mesh.vertices[tri[(i + 2) % 3]] - v).normalize();
                min_angle = min_angle.min(e1.dot(&e2).clamp(-1.0, 1.0).acos());
            }
        }
        // Longest-edge bisection keeps angles bounded away from zero.
        assert!(min_angle > 0.2, "min angle {} too small", min_angle);
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(build_sector_mesh_2d(&GradingConfig::new(0.25, 1.5)).is_err());
        assert!(build_sector_mesh_2d(&GradingConfig::new(0.0, 0.4)).is_err());
        let mut cfg = GradingConfig::new(0.25, 0.4);
        cfg.omega = 0.5 * std::f64::consts::PI;
        assert!(build_sector_mesh_2d(&cfg).is_err());
    }

    #[test]
    fn budget_enforced() {
        let mut cfg = GradingConfig::new(0.01, 0.4);
        cfg.max_triangles_2d = 100;
        assert!(matches!(
            build_sector_mesh_2d(&cfg),
            Err(Error::ElementBudgetExceeded { .. })
        ));
    }
}
