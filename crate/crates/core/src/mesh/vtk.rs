//! Legacy ASCII VTK unstructured-grid export.

use std::io::{BufWriter, Write};
use std::path::Path;

use super::TetMesh;

/// Per-cell data attached to a VTK export.
pub enum CellData<'a> {
    Scalars(&'a str, &'a [f64]),
    Vectors(&'a str, &'a [[f64; 3]]),
}

/// Writes the mesh (points + tetra cells) in the legacy ASCII format,
/// optionally with per-cell scalar or vector fields.
pub fn write_vtk(mesh: &TetMesh, path: &Path, cell_data: &[CellData<'_>]) -> std::io::Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);

    writeln!(w, "# vtk DataFile Version 4.2")?;
    writeln!(w, "prstokes unstructured grid")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;

    writeln!(w, "POINTS {} double", mesh.n_vertices())?;
    for v in &mesh.vertices {
        writeln!(w, "{:.17e} {:.17e} {:.17e}", v.x, v.y, v.z)?;
    }

    writeln!(w, "CELLS {} {}", mesh.n_tets(), 5 * mesh.n_tets())?;
    for tet in &mesh.tets {
        writeln!(w, "4 {} {} {} {}", tet[0], tet[1], tet[2], tet[3])?;
    }

    writeln!(w, "CELL_TYPES {}", mesh.n_tets())?;
    for _ in 0..mesh.n_tets() {
        writeln!(w, "10")?;
    }

    if !cell_data.is_empty() {
        writeln!(w, "CELL_DATA {}", mesh.n_tets())?;
        for data in cell_data {
            match data {
                CellData::Scalars(name, values) => {
                    assert_eq!(values.len(), mesh.n_tets());
                    writeln!(w, "SCALARS {} double 1", name)?;
                    writeln!(w, "LOOKUP_TABLE default")?;
                    for v in *values {
                        writeln!(w, "{:.17e}", v)?;
                    }
                }
                CellData::Vectors(name, values) => {
                    assert_eq!(values.len(), mesh.n_tets());
                    writeln!(w, "VECTORS {} double", name)?;
                    for v in *values {
                        writeln!(w, "{:.17e} {:.17e} {:.17e}", v[0], v[1], v[2])?;
                    }
                }
            }
        }
    }

    w.flush()
}

#[cfg(test)]
mod tests {
    use super::super::{build_tet_mesh, GradingConfig};
    use super::*;

    #[test]
    fn vtk_layout_matches_legacy_format() {
        let cfg = GradingConfig::new(0.5, 1.0);
        let mesh = build_tet_mesh(&cfg).unwrap();
        let dir = std::env::temp_dir();
        let path = dir.join("prstokes_vtk_test.vtk");
        write_vtk(&mesh, &path, &[CellData::Scalars("r_T", &mesh.tet_axis_r)]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "# vtk DataFile Version 4.2");
        lines.next();
        assert_eq!(lines.next().unwrap(), "ASCII");
        assert_eq!(lines.next().unwrap(), "DATASET UNSTRUCTURED_GRID");
        assert!(text.contains(&format!("POINTS {} double", mesh.n_vertices())));
        assert!(text.contains(&format!("CELLS {} {}", mesh.n_tets(), 5 * mesh.n_tets())));
        assert!(text.contains("CELL_TYPES"));
        assert!(text.contains("SCALARS r_T double 1"));
        std::fs::remove_file(&path).ok();
    }
}
