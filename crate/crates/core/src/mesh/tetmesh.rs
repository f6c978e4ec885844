use std::collections::HashMap;

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};

use super::{GradingConfig, Mesh2D};

/// How a tetrahedron touches the singular z-axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisTouch {
    None,
    /// Local index of the single vertex on the axis.
    Vertex(usize),
    /// Local indices of the two vertices spanning an edge on the axis.
    Edge(usize, usize),
}

/// Oriented facet of a tetrahedral mesh.
#[derive(Debug, Clone)]
pub struct Facet {
    /// Sorted global vertex indices.
    pub verts: [usize; 3],
    /// Owning tets; interior facets have two, boundary facets one.
    pub owners: (usize, Option<usize>),
    /// Unit normal, pointing outward from `owners.0`.
    pub normal: Vector3<f64>,
    pub area: f64,
    pub barycenter: Point3<f64>,
}

impl Facet {
    pub fn is_boundary(&self) -> bool {
        self.owners.1.is_none()
    }
}

/// Conforming tetrahedral mesh with facet adjacency and per-tet geometry.
#[derive(Debug, Clone)]
pub struct TetMesh {
    pub vertices: Vec<Point3<f64>>,
    pub tets: Vec<[usize; 4]>,
    pub facets: Vec<Facet>,
    /// Per tet, the global facet opposite each local vertex.
    pub tet_facets: Vec<[usize; 4]>,
    pub tet_volumes: Vec<f64>,
    /// Distance of each tet to the z-axis (minimum over its vertices).
    pub tet_axis_r: Vec<f64>,
}

fn facet_key(mut v: [usize; 3]) -> [usize; 3] {
    v.sort_unstable();
    v
}

fn signed_volume(p: &[Point3<f64>; 4]) -> f64 {
    (p[1] - p[0]).cross(&(p[2] - p[0])).dot(&(p[3] - p[0])) / 6.0
}

impl TetMesh {
    /// Builds facet connectivity and geometry from raw cells, verifying
    /// positive volumes and conformity.
    pub fn from_cells(vertices: Vec<Point3<f64>>, tets: Vec<[usize; 4]>) -> Result<Self> {
        let mut tet_volumes = Vec::with_capacity(tets.len());
        let mut tet_axis_r = Vec::with_capacity(tets.len());
        for (t, tet) in tets.iter().enumerate() {
            let p = [
                vertices[tet[0]],
                vertices[tet[1]],
                vertices[tet[2]],
                vertices[tet[3]],
            ];
            let vol = signed_volume(&p);
            if vol <= 0.0 {
                return Err(Error::DegenerateElement(format!(
                    "tet {} has non-positive volume {}",
                    t, vol
                )));
            }
            tet_volumes.push(vol);
            tet_axis_r.push(
                p.iter()
                    .map(|v| (v.x * v.x + v.y * v.y).sqrt())
                    .fold(f64::MAX, f64::min),
            );
        }

        let mut facet_ids: HashMap<[usize; 3], usize> = HashMap::new();
        let mut facets: Vec<Facet> = Vec::new();
        let mut tet_facets = vec![[usize::MAX; 4]; tets.len()];
        for (t, tet) in tets.iter().enumerate() {
            for i in 0..4 {
                let tri = facet_key([tet[(i + 1) % 4], tet[(i + 2) % 4], tet[(i + 3) % 4]]);
                let id = *facet_ids.entry(tri).or_insert_with(|| {
                    facets.push(Facet {
                        verts: tri,
                        owners: (usize::MAX, None),
                        normal: Vector3::zeros(),
                        area: 0.0,
                        barycenter: Point3::origin(),
                    });
                    facets.len() - 1
                });
                tet_facets[t][i] = id;
                let f = &mut facets[id];
                if f.owners.0 == usize::MAX {
                    f.owners.0 = t;
                } else if f.owners.1.is_none() {
                    f.owners.1 = Some(t);
                } else {
                    return Err(Error::DegenerateElement(format!(
                        "facet {:?} owned by more than two tets",
                        tri
                    )));
                }
            }
        }

        for f in facets.iter_mut() {
            let (a, b, c) = (
                vertices[f.verts[0]],
                vertices[f.verts[1]],
                vertices[f.verts[2]],
            );
            let cross = (b - a).cross(&(c - a));
            let twice_area = cross.norm();
            if twice_area <= 0.0 {
                return Err(Error::DegenerateElement("zero-area facet".into()));
            }
            f.area = 0.5 * twice_area;
            f.barycenter = Point3::from((a.coords + b.coords + c.coords) / 3.0);
            let mut n = cross / twice_area;
            // Orient outward from the first owner.
            let t0 = f.owners.0;
            let centroid = tets[t0]
                .iter()
                .fold(Vector3::zeros(), |acc, &v| acc + vertices[v].coords)
                / 4.0;
            if n.dot(&(f.barycenter.coords - centroid)) < 0.0 {
                n = -n;
            }
            f.normal = n;
        }

        Ok(Self {
            vertices,
            tets,
            facets,
            tet_facets,
            tet_volumes,
            tet_axis_r,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_tets(&self) -> usize {
        self.tets.len()
    }

    pub fn n_facets(&self) -> usize {
        self.facets.len()
    }

    pub fn tet_vertices(&self, t: usize) -> [Point3<f64>; 4] {
        let tet = self.tets[t];
        [
            self.vertices[tet[0]],
            self.vertices[tet[1]],
            self.vertices[tet[2]],
            self.vertices[tet[3]],
        ]
    }

    /// Extents of a tet along the coordinate axes (`h_{1,T}, h_{2,T}, h_{3,T}`).
    pub fn tet_extents(&self, t: usize) -> [f64; 3] {
        let p = self.tet_vertices(t);
        let mut ext = [0.0f64; 3];
        for d in 0..3 {
            let (mut lo, mut hi) = (f64::MAX, f64::MIN);
            for v in &p {
                lo = lo.min(v[d]);
                hi = hi.max(v[d]);
            }
            ext[d] = hi - lo;
        }
        ext
    }

    /// Which part of a tet lies on the z-axis. Vertices are on the axis only
    /// if placed there exactly by the generator.
    pub fn axis_touch(&self, t: usize) -> AxisTouch {
        let p = self.tet_vertices(t);
        let mut on_axis = [false; 4];
        let mut count = 0;
        for (i, v) in p.iter().enumerate() {
            if v.x.abs() < 1e-15 && v.y.abs() < 1e-15 {
                on_axis[i] = true;
                count += 1;
            }
        }
        match count {
            0 => AxisTouch::None,
            1 => AxisTouch::Vertex(on_axis.iter().position(|&b| b).unwrap()),
            2 => {
                let mut it = (0..4).filter(|&i| on_axis[i]);
                AxisTouch::Edge(it.next().unwrap(), it.next().unwrap())
            }
            _ => unreachable!("three collinear vertices would make a degenerate tet"),
        }
    }

    /// `true` when `t` is the first owner of facet `f`, i.e. the global facet
    /// normal points out of `t`.
    pub fn facet_outward(&self, t: usize, f: usize) -> bool {
        self.facets[f].owners.0 == t
    }

    pub fn total_volume(&self) -> f64 {
        self.tet_volumes.iter().sum()
    }

    /// Checks that every facet has one or two owners and that volumes are positive.
    pub fn audit_conformity(&self) -> Result<()> {
        for (t, &vol) in self.tet_volumes.iter().enumerate() {
            if vol <= 0.0 {
                return Err(Error::DegenerateElement(format!("tet {} volume {}", t, vol)));
            }
        }
        for f in &self.facets {
            if f.owners.0 == usize::MAX {
                return Err(Error::DegenerateElement("facet without owner".into()));
            }
        }
        Ok(())
    }
}

/// Extrudes a 2D sector triangulation into `n_z = ceil(z_len / h)` uniform
/// layers and splits every prism into three tets. Prism diagonals are chosen
/// by global vertex index so that neighbouring prisms produce matching facets.
pub fn extrude_to_tets(m2d: &Mesh2D, cfg: &GradingConfig) -> Result<TetMesh> {
    cfg.validate()?;
    let n2d = m2d.vertices.len();
    let n_z = cfg.n_layers();
    let dz = cfg.z_len / n_z as f64;

    let mut vertices = Vec::with_capacity(n2d * (n_z + 1));
    for k in 0..=n_z {
        let z = k as f64 * dz;
        for v in &m2d.vertices {
            vertices.push(Point3::new(v.x, v.y, z));
        }
    }

    let mut tets = Vec::with_capacity(3 * n_z * m2d.n_triangles());
    for k in 0..n_z {
        for tri in &m2d.triangles {
            let bottom = [tri[0] + k * n2d, tri[1] + k * n2d, tri[2] + k * n2d];
            let top = [bottom[0] + n2d, bottom[1] + n2d, bottom[2] + n2d];
            for tet in split_prism(bottom, top) {
                tets.push(tet);
            }
        }
    }

    TetMesh::from_cells(vertices, tets)
}

/// Splits a prism (triangular base `bottom`, matching `top`, vertical edges
/// `bottom[i]-top[i]`) into three tets. The labelling is normalised so that
/// the smallest global index sits at base position 0; the free quad diagonal
/// goes through the smallest index of that quad. Both choices depend only on
/// global indices, which makes the split match across shared quads.
fn split_prism(bottom: [usize; 3], top: [usize; 3]) -> [[usize; 4]; 3] {
    let min_v = bottom.iter().chain(top.iter()).min().copied().unwrap();
    let (b, t) = if bottom.contains(&min_v) {
        (bottom, top)
    } else {
        // Flip upside down, reversing winding to keep the orientation.
        ([top[0], top[2], top[1]], [bottom[0], bottom[2], bottom[1]])
    };
    let r = (0..3).find(|&i| b[i] == min_v).unwrap();
    let rot = |v: [usize; 3]| [v[r], v[(r + 1) % 3], v[(r + 2) % 3]];
    let (b, t) = (rot(b), rot(t));

    // Prism positions: p0 p1 p2 bottom, p3 p4 p5 top; p0 is the global minimum,
    // so the quads adjacent to p0 take diagonals p0-p4 and p0-p5. The quad
    // (p1, p2, p5, p4) picks the diagonal through its own smallest index.
    let (p0, p1, p2, p3, p4, p5) = (b[0], b[1], b[2], t[0], t[1], t[2]);
    let m = p1.min(p2).min(p4).min(p5);
    if m == p1 || m == p5 {
        [[p0, p1, p2, p5], [p0, p1, p5, p4], [p0, p4, p5, p3]]
    } else {
        [[p0, p1, p2, p4], [p0, p2, p5, p4], [p0, p4, p5, p3]]
    }
}
