//! Tetrahedral volume meshes with an oriented, watertight boundary surface.
//!
//! A [`Mesh`] is immutable once built. Construction normalizes the tetrahedron
//! vertex order so every signed volume is positive, recovers (or checks) the
//! boundary triangles, orients them outward and caches their geometry.

use std::collections::HashMap;

use thiserror::Error;

pub type Point = [f64; 3];

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("invalid mesh parameter: {0}")]
    InvalidParameter(String),
    #[error("tetrahedron {tet} references vertex {vertex}, but the mesh has {count} vertices")]
    VertexOutOfRange { tet: usize, vertex: usize, count: usize },
    #[error("tetrahedron {0} is degenerate (zero volume)")]
    DegenerateTet(usize),
    #[error("vertex {0} is not used by any tetrahedron")]
    OrphanVertex(usize),
    #[error("facet {0:?} is shared by more than two tetrahedra")]
    NonManifold([usize; 3]),
    #[error("boundary is not watertight: {0}")]
    NotWatertight(String),
    #[error("boundary face {0} is degenerate (zero area)")]
    DegenerateFace(usize),
    #[error("face index {index} out of range ({count} boundary faces)")]
    FaceOutOfRange { index: usize, count: usize },
    #[error("MSH parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported MSH element type {kind} (element {tag})")]
    UnsupportedElement { tag: usize, kind: usize },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Area, centroid and outward unit normal of a boundary triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceGeometry {
    pub area: f64,
    pub centroid: Point,
    pub normal: Point,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    vertices: Vec<Point>,
    tets: Vec<[usize; 4]>,
    boundary_faces: Vec<[usize; 3]>,
    face_to_tet: Vec<usize>,
    boundary_vertex: Vec<bool>,
    face_geometry: Vec<FaceGeometry>,
}

pub(crate) fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: Point, b: Point) -> Point {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn norm(a: Point) -> f64 {
    dot(a, a).sqrt()
}

fn signed_volume(p: [Point; 4]) -> f64 {
    dot(sub(p[1], p[0]), cross(sub(p[2], p[0]), sub(p[3], p[0]))) / 6.0
}

fn sorted3(mut f: [usize; 3]) -> [usize; 3] {
    f.sort_unstable();
    f
}

/// Local facets of a tetrahedron, each opposite to the vertex with the same index.
const TET_FACETS: [[usize; 3]; 4] = [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]];

/// Computes the geometry of a triangle, orienting its normal away from `interior`.
fn triangle_geometry(p: [Point; 3], interior: Point) -> Option<FaceGeometry> {
    let n = cross(sub(p[1], p[0]), sub(p[2], p[0]));
    let twice_area = norm(n);
    let scale = norm(sub(p[1], p[0])).max(norm(sub(p[2], p[0])));
    if !(twice_area > 1e-14 * scale * scale) {
        return None;
    }
    let centroid =
        [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0, (p[0][2] + p[1][2] + p[2][2]) / 3.0];
    let mut normal = [n[0] / twice_area, n[1] / twice_area, n[2] / twice_area];
    if dot(normal, sub(centroid, interior)) < 0.0 {
        normal = [-normal[0], -normal[1], -normal[2]];
    }
    Some(FaceGeometry { area: 0.5 * twice_area, centroid, normal })
}

impl Mesh {
    /// Builds a mesh from raw vertex and tetrahedron arrays.
    ///
    /// Tetrahedra with negative orientation are reordered. When `boundary` is
    /// `None` the boundary triangles are reconstructed from facets that belong
    /// to exactly one tetrahedron; otherwise the supplied triangles must match
    /// those facets one to one.
    pub fn new(
        vertices: Vec<Point>,
        mut tets: Vec<[usize; 4]>,
        boundary: Option<Vec<[usize; 3]>>,
    ) -> Result<Mesh, MeshError> {
        let nv = vertices.len();
        if tets.is_empty() {
            return Err(MeshError::InvalidParameter("mesh has no tetrahedra".into()));
        }
        let mut used = vec![false; nv];
        for (t, tet) in tets.iter_mut().enumerate() {
            for &v in tet.iter() {
                if v >= nv {
                    return Err(MeshError::VertexOutOfRange { tet: t, vertex: v, count: nv });
                }
                used[v] = true;
            }
            let p = tet.map(|v| vertices[v]);
            let vol = signed_volume(p);
            let scale = norm(sub(p[1], p[0]));
            if !(vol.abs() > 1e-14 * scale * scale * scale) {
                return Err(MeshError::DegenerateTet(t));
            }
            if vol < 0.0 {
                tet.swap(2, 3);
            }
        }
        if let Some(v) = used.iter().position(|u| !u) {
            return Err(MeshError::OrphanVertex(v));
        }

        // facet -> adjacent tets, in first-seen order for deterministic output
        let mut facets: HashMap<[usize; 3], (usize, usize)> = HashMap::new();
        let mut order: Vec<[usize; 3]> = Vec::new();
        for (t, tet) in tets.iter().enumerate() {
            for local in TET_FACETS {
                let key = sorted3(local.map(|l| tet[l]));
                match facets.get_mut(&key) {
                    None => {
                        facets.insert(key, (t, usize::MAX));
                        order.push(key);
                    }
                    Some(entry) if entry.1 == usize::MAX => entry.1 = t,
                    Some(_) => return Err(MeshError::NonManifold(key)),
                }
            }
        }
        let boundary_keys: Vec<[usize; 3]> = order.into_iter().filter(|k| facets[k].1 == usize::MAX).collect();

        let faces: Vec<[usize; 3]> = match boundary {
            None => boundary_keys.clone(),
            Some(given) => {
                let mut seen: HashMap<[usize; 3], usize> = HashMap::new();
                for (k, f) in given.iter().enumerate() {
                    if f.iter().any(|&v| v >= nv) {
                        return Err(MeshError::NotWatertight(format!(
                            "triangle {k} {f:?} references a vertex out of range"
                        )));
                    }
                    let key = sorted3(*f);
                    match facets.get(&key) {
                        Some(&(_, other)) if other == usize::MAX => {}
                        Some(_) => {
                            return Err(MeshError::NotWatertight(format!("triangle {k} {f:?} is an interior facet")))
                        }
                        None => {
                            return Err(MeshError::NotWatertight(format!(
                                "triangle {k} {f:?} does not match any tetrahedron facet"
                            )))
                        }
                    }
                    if let Some(prev) = seen.insert(key, k) {
                        return Err(MeshError::NotWatertight(format!("triangles {prev} and {k} are duplicates")));
                    }
                }
                if let Some(missing) = boundary_keys.iter().find(|k| !seen.contains_key(*k)) {
                    return Err(MeshError::NotWatertight(format!(
                        "boundary facet {missing:?} is not covered by any triangle"
                    )));
                }
                given
            }
        };

        let mut oriented = Vec::with_capacity(faces.len());
        let mut face_to_tet = Vec::with_capacity(faces.len());
        let mut face_geometry = Vec::with_capacity(faces.len());
        let mut boundary_vertex = vec![false; nv];
        for (k, f) in faces.iter().enumerate() {
            let t = facets[&sorted3(*f)].0;
            let tc = tet_centroid(&vertices, tets[t]);
            let p = f.map(|v| vertices[v]);
            let geo = triangle_geometry(p, tc).ok_or(MeshError::DegenerateFace(k))?;
            let n = cross(sub(p[1], p[0]), sub(p[2], p[0]));
            let face = if dot(n, geo.normal) < 0.0 { [f[0], f[2], f[1]] } else { *f };
            for &v in &face {
                boundary_vertex[v] = true;
            }
            oriented.push(face);
            face_to_tet.push(t);
            face_geometry.push(geo);
        }

        let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
        for f in &oriented {
            for e in 0..3 {
                let (a, b) = (f[e], f[(e + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        let mut bad: Vec<_> = edges.iter().filter(|(_, &c)| c != 2).collect();
        if !bad.is_empty() {
            bad.sort();
            let (edge, count) = bad[0];
            return Err(MeshError::NotWatertight(format!(
                "boundary edge {edge:?} is shared by {count} boundary faces"
            )));
        }

        Ok(Mesh { vertices, tets, boundary_faces: oriented, face_to_tet, boundary_vertex, face_geometry })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn tets(&self) -> &[[usize; 4]] {
        &self.tets
    }

    /// Boundary triangles, counter-clockwise when seen from outside.
    pub fn boundary_faces(&self) -> &[[usize; 3]] {
        &self.boundary_faces
    }

    pub fn face_to_tet(&self) -> &[usize] {
        &self.face_to_tet
    }

    pub fn boundary_vertex_flags(&self) -> &[bool] {
        &self.boundary_vertex
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.boundary_vertex[v]
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn tet_count(&self) -> usize {
        self.tets.len()
    }

    pub fn face_count(&self) -> usize {
        self.boundary_faces.len()
    }

    /// Cached geometry of boundary face `f`.
    pub fn face(&self, f: usize) -> &FaceGeometry {
        &self.face_geometry[f]
    }

    pub fn faces(&self) -> &[FaceGeometry] {
        &self.face_geometry
    }

    pub fn face_areas(&self) -> Vec<f64> {
        self.face_geometry.iter().map(|g| g.area).collect()
    }

    pub fn tet_points(&self, t: usize) -> [Point; 4] {
        self.tets[t].map(|v| self.vertices[v])
    }

    pub fn tet_volume(&self, t: usize) -> f64 {
        signed_volume(self.tet_points(t))
    }

    /// Sum of tetrahedron volumes.
    pub fn volume(&self) -> f64 {
        (0..self.tets.len()).map(|t| self.tet_volume(t)).sum()
    }

    /// Volume enclosed by the boundary surface, via the divergence theorem.
    pub fn boundary_volume(&self) -> f64 {
        self.face_geometry.iter().map(|g| g.area * dot(g.centroid, g.normal) / 3.0).sum()
    }

    pub fn boundary_area(&self) -> f64 {
        self.face_geometry.iter().map(|g| g.area).sum()
    }

    /// Recomputes the geometry of boundary face `f` from the vertex coordinates.
    pub fn face_geometry(&self, f: usize) -> Result<FaceGeometry, MeshError> {
        if f >= self.boundary_faces.len() {
            return Err(MeshError::FaceOutOfRange { index: f, count: self.boundary_faces.len() });
        }
        let tc = tet_centroid(&self.vertices, self.tets[self.face_to_tet[f]]);
        triangle_geometry(self.boundary_faces[f].map(|v| self.vertices[v]), tc).ok_or(MeshError::DegenerateFace(f))
    }
}

fn tet_centroid(vertices: &[Point], tet: [usize; 4]) -> Point {
    let mut c = [0.0; 3];
    for v in tet {
        for d in 0..3 {
            c[d] += 0.25 * vertices[v][d];
        }
    }
    c
}

/// Tetrahedral mesh of the solid ellipsoid `(x/a1)^2 + (y/a2)^2 + (z/a3)^2 <= 1`.
///
/// The cube `[-1,1]^3` is split into `n^3` cells of six Kuhn tetrahedra each
/// (mirrored so each cell's diagonal points away from the origin),
/// every lattice point is pushed radially by `|x|_inf / |x|_2` onto the ball,
/// and the axes are scaled afterwards.
pub fn generate_ellipsoid_mesh(a1: f64, a2: f64, a3: f64, n: usize) -> Result<Mesh, MeshError> {
    if n < 2 {
        return Err(MeshError::InvalidParameter(format!("subdivision count must be >= 2, got {n}")));
    }
    for (name, a) in [("a1", a1), ("a2", a2), ("a3", a3)] {
        if !(a > 0.0 && a.is_finite()) {
            return Err(MeshError::InvalidParameter(format!("axis {name} must be positive, got {a}")));
        }
    }
    let m = n + 1;
    let id = |i: usize, j: usize, k: usize| i + m * (j + m * k);
    let mut vertices = Vec::with_capacity(m * m * m);
    for k in 0..m {
        for j in 0..m {
            for i in 0..m {
                let x = [i, j, k].map(|c| -1.0 + 2.0 * c as f64 / n as f64);
                let inf = x.iter().fold(0.0f64, |acc, c| acc.max(c.abs()));
                let two = norm(x);
                let s = if two > 0.0 { inf / two } else { 0.0 };
                vertices.push([a1 * s * x[0], a2 * s * x[1], a3 * s * x[2]]);
            }
        }
    }
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut tets = Vec::with_capacity(6 * n * n * n);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                // Kuhn split mirrored per octant: the shared diagonal of the six
                // tets starts at the cell corner nearest the origin, so every
                // tet keeps a vertex off the boundary
                let base = [i, j, k];
                let flip = base.map(|c| 2 * c + 1 < n);
                let corner = |bits: [usize; 3]| {
                    let c: [usize; 3] = std::array::from_fn(|d| base[d] + if flip[d] { 1 - bits[d] } else { bits[d] });
                    id(c[0], c[1], c[2])
                };
                for perm in PERMS {
                    let mut bits = [0usize; 3];
                    let mut tet = [corner(bits); 4];
                    for (step, axis) in perm.into_iter().enumerate() {
                        bits[axis] = 1;
                        tet[step + 1] = corner(bits);
                    }
                    tets.push(tet);
                }
            }
        }
    }
    Mesh::new(vertices, tets, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_tet() -> Mesh {
        let v = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        Mesh::new(v, vec![[0, 1, 2, 3]], None).unwrap()
    }

    #[test]
    fn single_tet_has_four_outward_faces() {
        let mesh = unit_tet();
        assert_eq!(mesh.face_count(), 4);
        assert!((mesh.volume() - 1.0 / 6.0).abs() < 1e-15);
        let bottom = (0..4).map(|f| mesh.face_geometry(f).unwrap()).find(|g| g.centroid[2].abs() < 1e-15).unwrap();
        assert!((bottom.area - 0.5).abs() < 1e-15);
        assert_eq!(bottom.normal, [0.0, 0.0, -1.0]);
    }

    #[test]
    fn negative_tets_are_reordered() {
        let v = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let mesh = Mesh::new(v, vec![[0, 2, 1, 3]], None).unwrap();
        assert!(mesh.tet_volume(0) > 0.0);
    }

    #[test]
    fn face_vertex_order_matches_outward_normal() {
        let mesh = generate_ellipsoid_mesh(1.0, 0.5, 1.0, 3).unwrap();
        for (f, face) in mesh.boundary_faces().iter().enumerate() {
            let p = face.map(|v| mesh.vertices()[v]);
            let n = cross(sub(p[1], p[0]), sub(p[2], p[0]));
            assert!(dot(n, mesh.face(f).normal) > 0.0);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(matches!(generate_ellipsoid_mesh(1.0, 1.0, 1.0, 1), Err(MeshError::InvalidParameter(_))));
        assert!(matches!(generate_ellipsoid_mesh(1.0, 0.0, 1.0, 4), Err(MeshError::InvalidParameter(_))));
        assert!(matches!(generate_ellipsoid_mesh(-1.0, 1.0, 1.0, 4), Err(MeshError::InvalidParameter(_))));
    }

    #[test]
    fn every_tet_has_an_interior_vertex() {
        for n in [2, 3, 4, 7] {
            let mesh = generate_ellipsoid_mesh(1.0, 0.5, 1.0, n).unwrap();
            for tet in mesh.tets() {
                assert!(tet.iter().any(|&v| !mesh.is_boundary_vertex(v)), "n={n} {tet:?}");
            }
        }
    }

    #[test]
    fn unit_ball_boundary_lies_on_sphere() {
        let mesh = generate_ellipsoid_mesh(1.0, 1.0, 1.0, 2).unwrap();
        for (v, p) in mesh.vertices().iter().enumerate() {
            if mesh.is_boundary_vertex(v) {
                assert!((norm(*p) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ellipsoid_boundary_satisfies_equation() {
        let (a1, a2, a3) = (1.0, 0.5, 1.0);
        let mesh = generate_ellipsoid_mesh(a1, a2, a3, 5).unwrap();
        for (v, p) in mesh.vertices().iter().enumerate() {
            if mesh.is_boundary_vertex(v) {
                let r = (p[0] / a1).powi(2) + (p[1] / a2).powi(2) + (p[2] / a3).powi(2);
                assert!((r - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dangling_triangle_is_rejected() {
        let v = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, 1.0]];
        let tets = vec![[0, 1, 2, 3], [1, 2, 3, 4]];
        let mut faces = vec![[0, 1, 2], [0, 1, 3], [0, 2, 3], [2, 3, 4], [1, 3, 4], [1, 2, 4]];
        assert!(Mesh::new(v.clone(), tets.clone(), Some(faces.clone())).is_ok());
        faces.push([0, 1, 4]);
        let err = Mesh::new(v, tets, Some(faces)).unwrap_err();
        assert!(matches!(err, MeshError::NotWatertight(_)), "{err}");
        assert!(err.to_string().contains("triangle 6"), "{err}");
    }

    #[test]
    fn missing_boundary_triangle_is_rejected() {
        let v = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let err = Mesh::new(v, vec![[0, 1, 2, 3]], Some(vec![[0, 1, 2], [0, 1, 3], [0, 2, 3]])).unwrap_err();
        assert!(err.to_string().contains("not covered"), "{err}");
    }

    #[test]
    fn face_geometry_out_of_range() {
        let mesh = unit_tet();
        assert!(matches!(mesh.face_geometry(4), Err(MeshError::FaceOutOfRange { .. })));
    }

    #[test]
    fn degenerate_tet_is_rejected() {
        let v = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]];
        assert!(matches!(Mesh::new(v, vec![[0, 1, 2, 3]], None), Err(MeshError::DegenerateTet(0))));
    }
}
