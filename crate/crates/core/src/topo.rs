//! Sector geometry of `R^{M-1}`, closed-form topological derivatives and the
//! per-face steering field `G = (N^l)^{-1} T^l`, plus a finite-difference
//! oracle that measures the same derivative by flipping a single face.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::control::ControlProblem;
use crate::fem::FemError;
use crate::mesh::{dot, norm, Mesh};
use crate::partition::BoundaryPartition;

/// Slack used by [`SectorGeometry::sector_of`] on sector boundaries.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum TopoError {
    #[error("only 2 or 3 materials are supported, got {0}")]
    UnsupportedMaterialCount(usize),
    #[error("face {face} has label {actual}, expected {expected}")]
    WrongLabel { face: usize, expected: usize, actual: usize },
    #[error("label {0} out of range")]
    LabelOutOfRange(usize),
    #[error(transparent)]
    Fem(#[from] FemError),
}

/// A vector in `R^dim` attached to every boundary face, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceVectors {
    dim: usize,
    data: Vec<f64>,
}

impl FaceVectors {
    pub fn zeros(faces: usize, dim: usize) -> Self {
        FaceVectors { dim, data: vec![0.0; faces * dim] }
    }

    pub fn filled(faces: usize, value: &[f64]) -> Self {
        let mut data = Vec::with_capacity(faces * value.len());
        for _ in 0..faces {
            data.extend_from_slice(value);
        }
        FaceVectors { dim: value.len(), data }
    }

    pub fn from_flat(dim: usize, data: Vec<f64>) -> Self {
        assert!(dim > 0 && data.len().is_multiple_of(dim), "flat data length must be a multiple of dim");
        FaceVectors { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, f: usize) -> &[f64] {
        &self.data[f * self.dim..(f + 1) * self.dim]
    }

    pub fn get_mut(&mut self, f: usize) -> &mut [f64] {
        &mut self.data[f * self.dim..(f + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Hyperplane normals `n^{ij}` and the matrices `N^l` whose rows are `n^{jl}`, `j != l`.
#[derive(Debug, Clone)]
pub struct SectorGeometry {
    materials: usize,
    // normals[i][j] = n^{(i+1)(j+1)}; empty on the diagonal
    normals: Vec<Vec<Vec<f64>>>,
    matrices: Vec<Vec<f64>>,
    inverses: Vec<Vec<f64>>,
}

fn invert(mat: &[f64], dim: usize) -> Vec<f64> {
    match dim {
        1 => vec![1.0 / mat[0]],
        2 => {
            let det = mat[0] * mat[3] - mat[1] * mat[2];
            vec![mat[3] / det, -mat[1] / det, -mat[2] / det, mat[0] / det]
        }
        _ => unreachable!("sector matrices are at most 2x2"),
    }
}

fn mat_vec(mat: &[f64], x: &[f64], out: &mut [f64]) {
    let dim = x.len();
    for r in 0..dim {
        out[r] = (0..dim).map(|c| mat[r * dim + c] * x[c]).sum();
    }
}

impl SectorGeometry {
    /// Sector layout for `M = 2` (`s_1 = {psi < 0}`, `s_2 = {psi > 0}`) or `M = 3`
    /// with `n^{12} = (1,-1)/sqrt 2`, `n^{13} = (1,0)`, `n^{23} = (0,1)`.
    pub fn new(materials: usize) -> Result<Self, TopoError> {
        let upper: Vec<((usize, usize), Vec<f64>)> = match materials {
            2 => vec![((1, 2), vec![1.0])],
            3 => {
                let h = std::f64::consts::FRAC_1_SQRT_2;
                vec![((1, 2), vec![h, -h]), ((1, 3), vec![1.0, 0.0]), ((2, 3), vec![0.0, 1.0])]
            }
            m => return Err(TopoError::UnsupportedMaterialCount(m)),
        };
        let mut normals = vec![vec![Vec::new(); materials]; materials];
        for ((i, j), n) in upper {
            normals[j - 1][i - 1] = n.iter().map(|c| -c).collect();
            normals[i - 1][j - 1] = n;
        }
        let dim = materials - 1;
        let mut matrices = Vec::with_capacity(materials);
        let mut inverses = Vec::with_capacity(materials);
        for l in 0..materials {
            let mut mat = Vec::with_capacity(dim * dim);
            for j in (0..materials).filter(|&j| j != l) {
                mat.extend_from_slice(&normals[j][l]);
            }
            inverses.push(invert(&mat, dim));
            matrices.push(mat);
        }
        Ok(SectorGeometry { materials, normals, matrices, inverses })
    }

    pub fn materials(&self) -> usize {
        self.materials
    }

    pub fn dim(&self) -> usize {
        self.materials - 1
    }

    /// `n^{ij}` for labels `i != j` in `1..=M`.
    pub fn normal(&self, i: usize, j: usize) -> &[f64] {
        assert!(i != j, "n^{{ii}} is undefined");
        &self.normals[i - 1][j - 1]
    }

    /// `N^l`, row-major.
    pub fn matrix(&self, l: usize) -> &[f64] {
        &self.matrices[l - 1]
    }

    /// `(N^l)^{-1}`, row-major.
    pub fn inverse(&self, l: usize) -> &[f64] {
        &self.inverses[l - 1]
    }

    fn in_sector(&self, psi: &[f64], l: usize, slack: f64) -> bool {
        (1..=self.materials).filter(|&j| j != l).all(|j| dot_n(psi, self.normal(j, l)) > -slack)
    }

    /// Smallest label `l` with `psi . n^{jl} >= -TIE_TOLERANCE` for all `j != l`.
    pub fn sector_of(&self, psi: &[f64]) -> usize {
        (1..=self.materials)
            .find(|&l| {
                (1..=self.materials).filter(|&j| j != l).all(|j| dot_n(psi, self.normal(j, l)) >= -TIE_TOLERANCE)
            })
            .expect("sector closures cover R^{M-1}")
    }

    /// Labels whose open sector contains `psi`.
    pub fn strict_sectors(&self, psi: &[f64]) -> Vec<usize> {
        (1..=self.materials).filter(|&l| self.in_sector(psi, l, 0.0)).collect()
    }
}

fn dot_n(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `D^{ij} = -(alpha_i - alpha_j) * grad(p).n` at a face with flux `flux`.
pub fn topological_derivative_fixed_alpha(i: usize, j: usize, alpha: &[f64], flux: f64) -> f64 {
    -(alpha[i - 1] - alpha[j - 1]) * flux
}

/// `T^l` and `G` on every face, where `l` is the face's current label.
#[derive(Debug, Clone, PartialEq)]
pub struct TopoFields {
    pub t: FaceVectors,
    pub g: FaceVectors,
}

pub fn build_topo_fields(
    geom: &SectorGeometry,
    partition: &BoundaryPartition,
    alpha: &[f64],
    flux: &[f64],
) -> TopoFields {
    let m = geom.materials();
    let dim = geom.dim();
    let faces = partition.len();
    let mut t = FaceVectors::zeros(faces, dim);
    let mut g = FaceVectors::zeros(faces, dim);
    for f in 0..faces {
        let l = partition.label(f);
        let tf = t.get_mut(f);
        for (slot, k) in (1..=m).filter(|&k| k != l).enumerate() {
            tf[slot] = topological_derivative_fixed_alpha(l, k, alpha, flux[f]);
        }
        let tf = t.get(f).to_vec();
        mat_vec(geom.inverse(l), &tf, g.get_mut(f));
    }
    TopoFields { t, g }
}

/// Multiplies `N^l x`.
pub fn apply_sector_matrix(geom: &SectorGeometry, l: usize, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    mat_vec(geom.matrix(l), x, &mut out);
    out
}

/// Difference-quotient oracle for `D^{ij}` at fixed control values.
pub struct FdOracle<'a> {
    problem: &'a ControlProblem,
    partition: &'a BoundaryPartition,
    alpha: &'a [f64],
    base_cost: f64,
}

impl<'a> FdOracle<'a> {
    pub fn new(
        problem: &'a ControlProblem,
        partition: &'a BoundaryPartition,
        alpha: &'a [f64],
    ) -> Result<Self, TopoError> {
        let base_cost = problem.evaluate(partition, alpha, 0.0)?.cost;
        Ok(FdOracle { problem, partition, alpha, base_cost })
    }

    pub fn base_cost(&self) -> f64 {
        self.base_cost
    }

    /// `(J(S with face moved from i to j) - J(S)) / area(face)`.
    pub fn derivative(&self, face: usize, i: usize, j: usize) -> Result<f64, TopoError> {
        let actual = self.partition.label(face);
        if actual != i {
            return Err(TopoError::WrongLabel { face, expected: i, actual });
        }
        if j == 0 || j > self.partition.materials() {
            return Err(TopoError::LabelOutOfRange(j));
        }
        if i == j {
            return Ok(0.0);
        }
        let mut perturbed = self.partition.clone();
        perturbed.set_label(face, j).map_err(|_| TopoError::LabelOutOfRange(j))?;
        let cost = self.problem.evaluate(&perturbed, self.alpha, 0.0)?.cost;
        Ok((cost - self.base_cost) / self.problem.mesh.face(face).area)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdSample {
    pub face: usize,
    pub from: usize,
    pub to: usize,
    pub closed_form: f64,
    pub finite_difference: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdComparison {
    pub samples: Vec<FdSample>,
    pub sign_agreement: f64,
    pub median_relative_error: f64,
    pub mean_relative_error: f64,
}

impl FdComparison {
    pub fn from_samples(samples: Vec<FdSample>) -> Self {
        let n = samples.len().max(1) as f64;
        let agree = samples.iter().filter(|s| s.closed_form.signum() == s.finite_difference.signum()).count() as f64;
        let mut errs: Vec<f64> = samples.iter().map(|s| s.relative_error).collect();
        errs.sort_by(|a, b| a.total_cmp(b));
        let median = if errs.is_empty() {
            0.0
        } else if errs.len() % 2 == 1 {
            errs[errs.len() / 2]
        } else {
            0.5 * (errs[errs.len() / 2 - 1] + errs[errs.len() / 2])
        };
        FdComparison {
            sign_agreement: agree / n,
            median_relative_error: median,
            mean_relative_error: errs.iter().sum::<f64>() / n,
            samples,
        }
    }
}

/// Picks `count` distinct faces by drawing uniform random directions and taking
/// the face whose centroid direction is closest. Directions, not face indices,
/// are seeded, so the same seed probes the same surface locations on meshes of
/// different resolution.
pub fn sample_faces(mesh: &Mesh, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirs: Vec<[f64; 3]> = mesh
        .faces()
        .iter()
        .map(|g| {
            let r = norm(g.centroid);
            if r > 0.0 {
                g.centroid.map(|c| c / r)
            } else {
                g.normal
            }
        })
        .collect();
    let count = count.min(mesh.face_count());
    let mut picked = Vec::with_capacity(count);
    while picked.len() < count {
        let d = loop {
            let v: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let r = norm(v);
            if r > 1e-3 && r <= 1.0 {
                break v.map(|c| c / r);
            }
        };
        let face = (0..dirs.len()).max_by(|&a, &b| dot(dirs[a], d).total_cmp(&dot(dirs[b], d))).unwrap();
        if !picked.contains(&face) {
            picked.push(face);
        }
    }
    picked
}

/// Compares the closed form with the difference quotient on `count` seeded faces.
/// Each face moves from its current label to a random other label with a
/// different control value.
pub fn compare_with_fd(
    problem: &ControlProblem,
    partition: &BoundaryPartition,
    alpha: &[f64],
    count: usize,
    seed: u64,
) -> Result<FdComparison, TopoError> {
    let oracle = FdOracle::new(problem, partition, alpha)?;
    let u = problem.state(partition, alpha)?;
    let p = problem.adjoint(&u)?;
    let flux = problem.flux(&p);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut samples = Vec::with_capacity(count);
    for face in sample_faces(&problem.mesh, count, seed) {
        let i = partition.label(face);
        let targets: Vec<usize> =
            (1..=partition.materials()).filter(|&j| j != i && alpha[j - 1] != alpha[i - 1]).collect();
        if targets.is_empty() {
            continue;
        }
        let j = targets[rng.random_range(0..targets.len())];
        let closed_form = topological_derivative_fixed_alpha(i, j, alpha, flux[face]);
        let finite_difference = oracle.derivative(face, i, j)?;
        let relative_error = (closed_form - finite_difference).abs() / (finite_difference.abs() + 1e-12);
        samples.push(FdSample { face, from: i, to: j, closed_form, finite_difference, relative_error });
    }
    Ok(FdComparison::from_samples(samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_material_normals_and_matrices() {
        let geom = SectorGeometry::new(3).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_eq!(geom.normal(2, 1), &[-h, h]);
        assert_eq!(geom.matrix(3), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(geom.matrix(1), &[-h, h, -1.0, 0.0]);
        assert_eq!(geom.matrix(2), &[h, -h, 0.0, -1.0]);
        for l in 1..=3 {
            let (a, b) = (geom.matrix(l), geom.inverse(l));
            let prod = [
                a[0] * b[0] + a[1] * b[2],
                a[0] * b[1] + a[1] * b[3],
                a[2] * b[0] + a[3] * b[2],
                a[2] * b[1] + a[3] * b[3],
            ];
            for (k, v) in prod.iter().enumerate() {
                let id = if k == 0 || k == 3 { 1.0 } else { 0.0 };
                assert!((v - id).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_material_sectors() {
        let geom = SectorGeometry::new(2).unwrap();
        assert_eq!(geom.sector_of(&[-0.3]), 1);
        assert_eq!(geom.sector_of(&[0.3]), 2);
        assert_eq!(geom.sector_of(&[0.0]), 1);
        assert_eq!(geom.matrix(1), &[-1.0]);
        assert_eq!(geom.matrix(2), &[1.0]);
    }

    #[test]
    fn three_material_sector_examples() {
        let geom = SectorGeometry::new(3).unwrap();
        assert_eq!(geom.sector_of(&[1.0, 1.0]), 3);
        assert_eq!(geom.sector_of(&[-1.0, 0.0]), 1);
        assert_eq!(geom.sector_of(&[0.0, 0.0]), 1);
        assert_eq!(geom.sector_of(&[1.0, -1.0]), 2);
        assert_eq!(geom.strict_sectors(&[0.0, 0.0]), Vec::<usize>::new());
    }

    #[test]
    fn unsupported_material_counts() {
        for m in [0, 1, 4, 5] {
            assert!(matches!(SectorGeometry::new(m), Err(TopoError::UnsupportedMaterialCount(_))));
        }
    }

    #[test]
    fn closed_form_arithmetic() {
        let alpha = [0.1, 10.0, 3.0];
        assert!((topological_derivative_fixed_alpha(1, 2, &alpha, 2.0) - 19.8).abs() < 1e-12);
        assert_eq!(topological_derivative_fixed_alpha(1, 2, &[2.0, 2.0, 1.0], 5.0), 0.0);
        for flux in [-3.0, 0.5, 7.25] {
            for i in 1..=3 {
                for j in 1..=3 {
                    let a = topological_derivative_fixed_alpha(i, j, &alpha, flux);
                    let b = topological_derivative_fixed_alpha(j, i, &alpha, flux);
                    assert_eq!(a, -b);
                }
            }
        }
    }

    #[test]
    fn fields_in_region_three_equal_t() {
        let geom = SectorGeometry::new(3).unwrap();
        let part = BoundaryPartition::new(vec![3, 1, 2, 3], 3).unwrap();
        let alpha = [0.1, 10.0, 3.0];
        let flux = [1.5, -2.0, 0.25, -0.5];
        let fields = build_topo_fields(&geom, &part, &alpha, &flux);
        assert_eq!(fields.g.get(0), fields.t.get(0));
        assert_eq!(fields.g.get(3), fields.t.get(3));
        // T^1 stacks D^{12}, D^{13}
        assert_eq!(
            fields.t.get(1),
            &[
                topological_derivative_fixed_alpha(1, 2, &alpha, -2.0),
                topological_derivative_fixed_alpha(1, 3, &alpha, -2.0)
            ]
        );
        for f in 0..4 {
            let back = apply_sector_matrix(&geom, part.label(f), fields.g.get(f));
            for (a, b) in back.iter().zip(fields.t.get(f)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let zero = build_topo_fields(&geom, &part, &alpha, &[0.0; 4]);
        assert!(zero.g.as_flat().iter().all(|v| *v == 0.0));
        let equal = build_topo_fields(&geom, &part, &[2.0; 3], &flux);
        assert!(equal.t.as_flat().iter().all(|v| *v == 0.0));
        assert!(equal.g.as_flat().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn median_of_even_and_odd_samples() {
        let mk =
            |e: f64| FdSample { face: 0, from: 1, to: 2, closed_form: 1.0, finite_difference: -1.0, relative_error: e };
        let c = FdComparison::from_samples(vec![mk(0.1), mk(0.5), mk(0.3)]);
        assert_eq!(c.median_relative_error, 0.3);
        assert_eq!(c.sign_agreement, 0.0);
        let c = FdComparison::from_samples(vec![mk(0.1), mk(0.5), mk(0.3), mk(0.9)]);
        assert!((c.median_relative_error - 0.4).abs() < 1e-15);
    }
}
