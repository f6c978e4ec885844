//! Velocity/pressure dof bookkeeping: 3 velocity components per facet
//! (boundary facets carry prescribed Dirichlet values and are eliminated from
//! the unknown set), one pressure dof per tet.

use crate::mesh::TetMesh;

#[derive(Debug, Clone)]
pub struct DofMap {
    pub n_facets: usize,
    pub n_tets: usize,
    /// Per facet: is it on the domain boundary?
    pub is_boundary: Vec<bool>,
    pub boundary_facets: Vec<usize>,
    /// Facet -> free slot among interior facets, `None` for boundary facets.
    pub free_index: Vec<Option<usize>>,
    /// Free slot -> facet.
    pub facet_of_free: Vec<usize>,
}

impl DofMap {
    pub fn new(mesh: &TetMesh) -> Self {
        let n_facets = mesh.n_facets();
        let mut is_boundary = vec![false; n_facets];
        let mut boundary_facets = Vec::new();
        let mut free_index = vec![None; n_facets];
        let mut facet_of_free = Vec::new();
        for (f, facet) in mesh.facets.iter().enumerate() {
            if facet.is_boundary() {
                is_boundary[f] = true;
                boundary_facets.push(f);
            } else {
                free_index[f] = Some(facet_of_free.len());
                facet_of_free.push(f);
            }
        }
        Self {
            n_facets,
            n_tets: mesh.n_tets(),
            is_boundary,
            boundary_facets,
            free_index,
            facet_of_free,
        }
    }

    /// Total velocity dofs including boundary facets.
    pub fn n_u(&self) -> usize {
        3 * self.n_facets
    }

    pub fn n_p(&self) -> usize {
        self.n_tets
    }

    pub fn n_free_facets(&self) -> usize {
        self.facet_of_free.len()
    }

    /// Unknowns of the reduced saddle system (velocity + pressure).
    pub fn n_unknowns(&self) -> usize {
        3 * self.n_free_facets() + self.n_p()
    }

    pub fn velocity_dof(facet: usize, component: usize) -> usize {
        3 * facet + component
    }
}
