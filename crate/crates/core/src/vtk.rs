//! Legacy ASCII VTK snapshots of the boundary surface with per-face data.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::mesh::Mesh;
use crate::partition::BoundaryPartition;
use crate::topo::{topological_derivative_fixed_alpha, FaceVectors};

#[derive(Debug, Error)]
pub enum VtkError {
    #[error("snapshot field '{field}' has {got} entries, mesh has {expected} boundary faces")]
    SizeMismatch { field: &'static str, expected: usize, got: usize },
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Per-face fields written into one snapshot.
pub struct BoundarySnapshot<'a> {
    pub partition: &'a BoundaryPartition,
    pub psi: &'a FaceVectors,
    pub g: &'a FaceVectors,
    pub flux: &'a [f64],
    pub alpha: &'a [f64],
}

fn check_len(field: &'static str, expected: usize, got: usize) -> Result<(), VtkError> {
    if expected != got {
        return Err(VtkError::SizeMismatch { field, expected, got });
    }
    Ok(())
}

fn push_vector_scalars(out: &mut String, name: &str, v: &FaceVectors) {
    let _ = writeln!(out, "SCALARS {name} double {}", v.dim());
    out.push_str("LOOKUP_TABLE default\n");
    for row in v.iter() {
        let line: Vec<String> = row.iter().map(|x| format!("{x:.16e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
}

/// Renders the boundary triangles and their cell data.
///
/// Points are the boundary vertices only, renumbered in increasing order.
/// Cell data: `label`, `psi`, `G`, `flux` and `D_i_j` for every ordered pair.
pub fn boundary_snapshot_string(mesh: &Mesh, snap: &BoundarySnapshot) -> Result<String, VtkError> {
    let faces = mesh.face_count();
    check_len("label", faces, snap.partition.len())?;
    check_len("psi", faces, snap.psi.len())?;
    check_len("G", faces, snap.g.len())?;
    check_len("flux", faces, snap.flux.len())?;

    let mut local = vec![usize::MAX; mesh.vertex_count()];
    let mut points = Vec::new();
    for face in mesh.boundary_faces() {
        for &v in face {
            if local[v] == usize::MAX {
                local[v] = 0;
            }
        }
    }
    for (v, slot) in local.iter_mut().enumerate() {
        if *slot == 0 {
            *slot = points.len();
            points.push(v);
        }
    }

    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    out.push_str("boundary partition\n");
    out.push_str("ASCII\n");
    out.push_str("DATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(out, "POINTS {} double", points.len());
    for &v in &points {
        let [x, y, z] = mesh.vertices()[v];
        let _ = writeln!(out, "{x:.16e} {y:.16e} {z:.16e}");
    }
    let _ = writeln!(out, "CELLS {faces} {}", 4 * faces);
    for face in mesh.boundary_faces() {
        let _ = writeln!(out, "3 {} {} {}", local[face[0]], local[face[1]], local[face[2]]);
    }
    let _ = writeln!(out, "CELL_TYPES {faces}");
    for _ in 0..faces {
        out.push_str("5\n");
    }

    let _ = writeln!(out, "CELL_DATA {faces}");
    out.push_str("SCALARS label int 1\nLOOKUP_TABLE default\n");
    for &l in snap.partition.labels() {
        let _ = writeln!(out, "{l}");
    }
    push_vector_scalars(&mut out, "psi", snap.psi);
    push_vector_scalars(&mut out, "G", snap.g);
    out.push_str("SCALARS flux double 1\nLOOKUP_TABLE default\n");
    for &q in snap.flux {
        let _ = writeln!(out, "{q:.16e}");
    }
    let m = snap.alpha.len();
    for i in 1..=m {
        for j in (1..=m).filter(|&j| j != i) {
            let _ = writeln!(out, "SCALARS D_{i}_{j} double 1\nLOOKUP_TABLE default");
            for &q in snap.flux {
                let _ = writeln!(out, "{:.16e}", topological_derivative_fixed_alpha(i, j, snap.alpha, q));
            }
        }
    }
    Ok(out)
}

pub fn write_boundary_snapshot(mesh: &Mesh, snap: &BoundarySnapshot, path: &Path) -> Result<(), VtkError> {
    let text = boundary_snapshot_string(mesh, snap)?;
    std::fs::write(path, text).map_err(|source| VtkError::Io { path: path.to_path_buf(), source })
}

/// One cell-data array read back from a snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct CellArray {
    pub components: usize,
    pub values: Vec<f64>,
}

impl CellArray {
    pub fn row(&self, cell: usize) -> &[f64] {
        &self.values[cell * self.components..(cell + 1) * self.components]
    }
}

/// Reads every `SCALARS` array of the `CELL_DATA` section of a file written
/// by [`boundary_snapshot_string`].
pub fn parse_cell_data(text: &str) -> Result<BTreeMap<String, CellArray>, VtkError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let mut cells = None;
    for (_, line) in lines.by_ref() {
        if let Some(rest) = line.strip_prefix("CELL_DATA") {
            cells = rest.trim().parse::<usize>().ok();
            break;
        }
    }
    let Some(cells) = cells else {
        return Err(VtkError::Parse { line: 0, message: "no CELL_DATA section".into() });
    };
    let mut arrays = BTreeMap::new();
    while let Some((no, line)) = lines.next() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.first() != Some(&"SCALARS") || parts.len() < 3 {
            return Err(VtkError::Parse { line: no, message: format!("expected SCALARS header, found '{line}'") });
        }
        let name = parts[1].to_string();
        let components = match parts.get(3) {
            Some(c) => c.parse().map_err(|_| VtkError::Parse { line: no, message: "bad component count".into() })?,
            None => 1,
        };
        match lines.next() {
            Some((_, l)) if l.starts_with("LOOKUP_TABLE") => {}
            _ => return Err(VtkError::Parse { line: no + 1, message: "missing LOOKUP_TABLE".into() }),
        }
        let mut values = Vec::with_capacity(cells * components);
        while values.len() < cells * components {
            let Some((no, l)) = lines.next() else {
                return Err(VtkError::Parse { line: no, message: format!("array '{name}' is truncated") });
            };
            for tok in l.split_whitespace() {
                values.push(
                    tok.parse()
                        .map_err(|_| VtkError::Parse { line: no, message: format!("'{tok}' is not a number") })?,
                );
            }
        }
        arrays.insert(name, CellArray { components, values });
    }
    Ok(arrays)
}

/// Region labels stored in a snapshot file.
pub fn read_snapshot_labels(path: &Path) -> Result<Vec<usize>, VtkError> {
    let text = std::fs::read_to_string(path).map_err(|source| VtkError::Io { path: path.to_path_buf(), source })?;
    let arrays = parse_cell_data(&text)?;
    let labels = arrays.get("label").ok_or_else(|| VtkError::Parse { line: 0, message: "no 'label' array".into() })?;
    Ok(labels.values.iter().map(|&v| v as usize).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_ellipsoid_mesh;

    #[test]
    fn layout_and_round_trip() {
        let mesh = generate_ellipsoid_mesh(1.0, 0.5, 1.0, 2).unwrap();
        let faces = mesh.face_count();
        let labels: Vec<usize> = (0..faces).map(|f| 1 + f % 3).collect();
        let partition = BoundaryPartition::new(labels.clone(), 3).unwrap();
        let psi = FaceVectors::filled(faces, &[0.1, -2.0 / 3.0]);
        let g = FaceVectors::zeros(faces, 2);
        let flux: Vec<f64> = (0..faces).map(|f| f as f64 * 0.01).collect();
        let alpha = [0.1, 10.0, 3.0];
        let snap = BoundarySnapshot { partition: &partition, psi: &psi, g: &g, flux: &flux, alpha: &alpha };
        let text = boundary_snapshot_string(&mesh, &snap).unwrap();
        assert!(text.starts_with("# vtk DataFile Version 3.0\n"));
        assert!(text.contains(&format!("CELL_TYPES {faces}\n")));
        let arrays = parse_cell_data(&text).unwrap();
        assert_eq!(arrays.len(), 4 + 6);
        let read: Vec<usize> = arrays["label"].values.iter().map(|&v| v as usize).collect();
        assert_eq!(read, labels);
        assert_eq!(arrays["psi"].row(3), &[0.1, -2.0 / 3.0]);
        assert_eq!(arrays["flux"].values, flux);
        assert_eq!(arrays["D_1_2"].values[7], topological_derivative_fixed_alpha(1, 2, &alpha, flux[7]));
    }

    #[test]
    fn size_mismatch_is_reported() {
        let mesh = generate_ellipsoid_mesh(1.0, 1.0, 1.0, 2).unwrap();
        let faces = mesh.face_count();
        let partition = BoundaryPartition::uniform(faces, 2, 1).unwrap();
        let psi = FaceVectors::zeros(faces, 1);
        let snap = BoundarySnapshot { partition: &partition, psi: &psi, g: &psi, flux: &[0.0], alpha: &[1.0, 2.0] };
        assert!(matches!(boundary_snapshot_string(&mesh, &snap), Err(VtkError::SizeMismatch { field: "flux", .. })));
    }
}
