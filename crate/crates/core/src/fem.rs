//! P1 finite elements on tetrahedra: stiffness and mass assembly, the lumped
//! boundary-trace projection of piecewise-constant data, and a
//! Jacobi-preconditioned conjugate-gradient Dirichlet solver.

use std::ops::{Deref, DerefMut};

use thiserror::Error;

use crate::mesh::{cross, dot, sub, Mesh, Point};
use crate::partition::BoundaryPartition;

#[derive(Debug, Error)]
pub enum FemError {
    #[error("conjugate gradients did not converge in {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("field has {got} values, expected {expected}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("boundary data is nonzero ({value}) at interior vertex {vertex}")]
    InteriorBoundaryData { vertex: usize, value: f64 },
    #[error("boundary vertex {0} has no incident boundary face")]
    InconsistentBoundary(usize),
    #[error("label {label} on face {face} has no control value ({count} values given)")]
    MissingControl { face: usize, label: usize, count: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// One scalar per mesh vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalField(pub Vec<f64>);

impl NodalField {
    pub fn zeros(n: usize) -> Self {
        NodalField(vec![0.0; n])
    }

    pub fn constant(n: usize, value: f64) -> Self {
        NodalField(vec![value; n])
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(mesh: &Mesh, f: impl Fn(Point) -> f64) -> Self {
        NodalField(mesh.vertices().iter().map(|&p| f(p)).collect())
    }

    /// Nodal interpolant of `f` on boundary vertices, zero elsewhere.
    pub fn boundary_trace(mesh: &Mesh, f: impl Fn(Point) -> f64) -> Self {
        NodalField(
            mesh.vertices()
                .iter()
                .enumerate()
                .map(|(v, &p)| if mesh.is_boundary_vertex(v) { f(p) } else { 0.0 })
                .collect(),
        )
    }

    pub fn max_abs_diff(&self, other: &NodalField) -> f64 {
        self.iter().zip(other.iter()).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

impl Deref for NodalField {
    type Target = Vec<f64>;
    fn deref(&self) -> &Vec<f64> {
        &self.0
    }
}

impl DerefMut for NodalField {
    fn deref_mut(&mut self) -> &mut Vec<f64> {
        &mut self.0
    }
}

/// Square sparse matrix in compressed sparse row layout.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Zero matrix with the vertex-adjacency pattern of `mesh` (sorted columns).
    fn with_mesh_pattern(mesh: &Mesh) -> Self {
        let n = mesh.vertex_count();
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for tet in mesh.tets() {
            for &a in tet {
                adj[a].extend_from_slice(tet);
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for row in adj.iter_mut() {
            row.sort_unstable();
            row.dedup();
            col_idx.extend_from_slice(row);
            row_ptr.push(col_idx.len());
        }
        let nnz = col_idx.len();
        CsrMatrix { n, row_ptr, col_idx, values: vec![0.0; nnz] }
    }

    fn position(&self, i: usize, j: usize) -> Option<usize> {
        let row = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        row.binary_search(&j).ok().map(|k| self.row_ptr[i] + k)
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.position(i, j).expect("entry outside sparsity pattern");
        self.values[k] += v;
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |k| self.values[k])
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            y[i] = s;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// Largest |A_ij - A_ji|.
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }
}

/// Constant P1 basis gradients on a tetrahedron and its volume.
pub fn tet_gradients(p: [Point; 4]) -> ([Point; 4], f64) {
    let e1 = sub(p[1], p[0]);
    let e2 = sub(p[2], p[0]);
    let e3 = sub(p[3], p[0]);
    let det = dot(e1, cross(e2, e3));
    let g1 = cross(e2, e3).map(|c| c / det);
    let g2 = cross(e3, e1).map(|c| c / det);
    let g3 = cross(e1, e2).map(|c| c / det);
    let g0 = [-(g1[0] + g2[0] + g3[0]), -(g1[1] + g2[1] + g3[1]), -(g1[2] + g2[2] + g3[2])];
    ([g0, g1, g2, g3], det / 6.0)
}

/// Element stiffness matrix `vol * grad(phi_i) . grad(phi_j)`.
pub fn element_stiffness(p: [Point; 4]) -> [[f64; 4]; 4] {
    let (g, vol) = tet_gradients(p);
    let mut k = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            k[i][j] = vol * dot(g[i], g[j]);
        }
    }
    k
}

pub fn assemble_stiffness(mesh: &Mesh) -> CsrMatrix {
    let mut k = CsrMatrix::with_mesh_pattern(mesh);
    for (t, tet) in mesh.tets().iter().enumerate() {
        let ke = element_stiffness(mesh.tet_points(t));
        for a in 0..4 {
            for b in 0..4 {
                k.add(tet[a], tet[b], ke[a][b]);
            }
        }
    }
    k
}

/// Consistent P1 mass matrix: `vol/10` on the diagonal, `vol/20` off it.
pub fn assemble_mass(mesh: &Mesh) -> CsrMatrix {
    let mut m = CsrMatrix::with_mesh_pattern(mesh);
    for (t, tet) in mesh.tets().iter().enumerate() {
        let vol = mesh.tet_volume(t);
        for a in 0..4 {
            for b in 0..4 {
                m.add(tet[a], tet[b], if a == b { vol / 10.0 } else { vol / 20.0 });
            }
        }
    }
    m
}

/// `a^T M b`.
pub fn l2_inner(mass: &CsrMatrix, a: &[f64], b: &[f64]) -> f64 {
    let mb = mass.mul_vec(b);
    a.iter().zip(&mb).map(|(x, y)| x * y).sum()
}

/// Right-hand side of the Poisson problem.
#[derive(Debug, Clone)]
pub enum Source {
    Constant(f64),
    Nodal(NodalField),
}

impl Source {
    /// P1 load vector. A constant source uses the exact rule `vol*f/4` per vertex;
    /// a nodal source is integrated through the mass matrix.
    pub fn load_vector(&self, mesh: &Mesh, mass: Option<&CsrMatrix>) -> Vec<f64> {
        match self {
            Source::Constant(f) => {
                let mut b = vec![0.0; mesh.vertex_count()];
                for (t, tet) in mesh.tets().iter().enumerate() {
                    let share = mesh.tet_volume(t) * f / 4.0;
                    for &v in tet {
                        b[v] += share;
                    }
                }
                b
            }
            Source::Nodal(field) => match mass {
                Some(m) => m.mul_vec(field),
                None => assemble_mass(mesh).mul_vec(field),
            },
        }
    }
}

/// Lumped L2 projection of the piecewise-constant boundary control onto P1.
///
/// Each boundary vertex receives the area-weighted mean of `alpha[label - 1]`
/// over its incident boundary faces; interior vertices get zero.
pub fn project_boundary_control(
    mesh: &Mesh,
    partition: &BoundaryPartition,
    alpha: &[f64],
) -> Result<NodalField, FemError> {
    let nf = mesh.face_count();
    if partition.len() != nf {
        return Err(FemError::SizeMismatch { expected: nf, got: partition.len() });
    }
    let nv = mesh.vertex_count();
    let mut weighted = vec![0.0; nv];
    let mut weight = vec![0.0; nv];
    for (f, face) in mesh.boundary_faces().iter().enumerate() {
        let label = partition.label(f);
        let value =
            *alpha.get(label.wrapping_sub(1)).ok_or(FemError::MissingControl { face: f, label, count: alpha.len() })?;
        let area = mesh.face(f).area;
        for &v in face {
            weighted[v] += area * value;
            weight[v] += area;
        }
    }
    let mut g = vec![0.0; nv];
    for v in 0..nv {
        if mesh.is_boundary_vertex(v) {
            if weight[v] <= 0.0 {
                return Err(FemError::InconsistentBoundary(v));
            }
            g[v] = weighted[v] / weight[v];
        }
    }
    Ok(NodalField(g))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Target `|r| / |b|` on the interior unknowns.
    pub rel_tol: f64,
    /// Iteration cap as a multiple of the number of unknowns.
    pub max_iter_factor: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { rel_tol: 1e-10, max_iter_factor: 10 }
    }
}

/// Solves `-Δu = f` with `u = g` on the boundary by homogenization: boundary
/// values are fixed and CG runs on the interior rows of `K u = F`.
pub fn solve_dirichlet(
    mesh: &Mesh,
    stiffness: &CsrMatrix,
    g: &NodalField,
    source: &Source,
    mass: Option<&CsrMatrix>,
    opts: SolverOptions,
) -> Result<NodalField, FemError> {
    let n = mesh.vertex_count();
    if g.len() != n {
        return Err(FemError::SizeMismatch { expected: n, got: g.len() });
    }
    for (v, &value) in g.iter().enumerate() {
        if !mesh.is_boundary_vertex(v) && value != 0.0 {
            return Err(FemError::InteriorBoundaryData { vertex: v, value });
        }
    }
    let load = source.load_vector(mesh, mass);
    solve_with_load(mesh, stiffness, g, &load, opts)
}

/// Dirichlet solve with an already assembled load vector.
pub fn solve_with_load(
    mesh: &Mesh,
    stiffness: &CsrMatrix,
    g: &[f64],
    load: &[f64],
    opts: SolverOptions,
) -> Result<NodalField, FemError> {
    let n = mesh.vertex_count();
    let fixed = mesh.boundary_vertex_flags();
    if load.iter().any(|v| !v.is_finite()) {
        return Err(FemError::NonFinite("load vector"));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(FemError::NonFinite("boundary data"));
    }

    // rhs = F - K g, restricted to interior rows
    let kg = stiffness.mul_vec(g);
    let mut rhs: Vec<f64> = (0..n).map(|i| if fixed[i] { 0.0 } else { load[i] - kg[i] }).collect();
    let diag = stiffness.diagonal();
    let inv_diag: Vec<f64> = (0..n).map(|i| if fixed[i] { 0.0 } else { 1.0 / diag[i] }).collect();
    let unknowns = fixed.iter().filter(|b| !**b).count();

    let mut x = vec![0.0; n];
    if unknowns > 0 {
        pcg(stiffness, fixed, &inv_diag, &mut rhs, &mut x, opts.rel_tol, opts.max_iter_factor * unknowns.max(1))?;
    }
    for i in 0..n {
        if fixed[i] {
            x[i] = g[i];
        }
    }
    Ok(NodalField(x))
}

/// Jacobi-preconditioned CG on the rows with `fixed[i] == false`.
/// `r` holds the right-hand side on entry and is used as the residual.
fn pcg(
    a: &CsrMatrix,
    fixed: &[bool],
    inv_diag: &[f64],
    r: &mut [f64],
    x: &mut [f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<usize, FemError> {
    let n = r.len();
    let norm_b = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm_b == 0.0 {
        return Ok(0);
    }
    let mut z: Vec<f64> = (0..n).map(|i| inv_diag[i] * r[i]).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut residual = 1.0;
    for it in 0..max_iter {
        a.mul_vec_into(&p, &mut ap);
        for i in 0..n {
            if fixed[i] {
                ap[i] = 0.0;
            }
        }
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            return Err(FemError::NotConverged { iterations: it, residual });
        }
        let step = rz / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        residual = r.iter().map(|v| v * v).sum::<f64>().sqrt() / norm_b;
        if residual <= rel_tol {
            return Ok(it + 1);
        }
        for i in 0..n {
            z[i] = inv_diag[i] * r[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(FemError::NotConverged { iterations: max_iter, residual })
}
