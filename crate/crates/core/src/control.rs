//! Cost functional, adjoint solve, boundary flux and the projected optimal
//! control values.

use thiserror::Error;

use crate::fem::{
    assemble_mass, assemble_stiffness, l2_inner, project_boundary_control, solve_with_load, tet_gradients, CsrMatrix,
    FemError, NodalField, SolverOptions, Source,
};
use crate::mesh::{dot, Mesh};
use crate::partition::BoundaryPartition;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error("control bounds invalid: {0}")]
    InvalidBounds(String),
    #[error("optimal control values need lambda > 0 (got {0}); use fixed control values instead")]
    ZeroLambda(f64),
    #[error("expected {expected} control values, got {got}")]
    WrongLength { expected: usize, got: usize },
}

/// Control values `alpha` with the admissible box `lower <= alpha <= upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlValues {
    pub alpha: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ControlValues {
    pub fn new(alpha: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, ControlError> {
        if lower.len() != alpha.len() || upper.len() != alpha.len() {
            return Err(ControlError::InvalidBounds(format!(
                "{} values but {} lower and {} upper bounds",
                alpha.len(),
                lower.len(),
                upper.len()
            )));
        }
        if let Some(i) = (0..alpha.len()).find(|&i| !(lower[i] <= upper[i])) {
            return Err(ControlError::InvalidBounds(format!(
                "lower bound {} exceeds upper bound {} for value {}",
                lower[i],
                upper[i],
                i + 1
            )));
        }
        if alpha.iter().any(|a| !a.is_finite()) {
            return Err(ControlError::InvalidBounds("control values must be finite".into()));
        }
        Ok(ControlValues { alpha, lower, upper })
    }

    /// Control values with an unbounded box.
    pub fn unbounded(alpha: Vec<f64>) -> Self {
        let n = alpha.len();
        ControlValues { alpha, lower: vec![f64::NEG_INFINITY; n], upper: vec![f64::INFINITY; n] }
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn is_feasible(&self) -> bool {
        (0..self.len()).all(|i| self.lower[i] <= self.alpha[i] && self.alpha[i] <= self.upper[i])
    }

    pub fn clamp(&self, i: usize, x: f64) -> f64 {
        x.max(self.lower[i]).min(self.upper[i])
    }
}

/// `(u - u_ref)^T M (u - u_ref) + lambda |alpha|^2`.
pub fn cost(mass: &CsrMatrix, u: &[f64], u_ref: &[f64], alpha: &[f64], lambda: f64) -> f64 {
    let e: Vec<f64> = u.iter().zip(u_ref).map(|(a, b)| a - b).collect();
    l2_inner(mass, &e, &e) + lambda * alpha.iter().map(|a| a * a).sum::<f64>()
}

/// Adjoint state: `p = 0` on the boundary and `K p = -2 M (u - u_ref)` on interior rows.
pub fn solve_adjoint(
    mesh: &Mesh,
    stiffness: &CsrMatrix,
    mass: &CsrMatrix,
    u: &[f64],
    u_ref: &[f64],
    opts: SolverOptions,
) -> Result<NodalField, FemError> {
    let n = mesh.vertex_count();
    for field in [u, u_ref] {
        if field.len() != n {
            return Err(FemError::SizeMismatch { expected: n, got: field.len() });
        }
    }
    let e: Vec<f64> = u.iter().zip(u_ref).map(|(a, b)| -2.0 * (a - b)).collect();
    let load = mass.mul_vec(&e);
    solve_with_load(mesh, stiffness, &vec![0.0; n], &load, opts)
}

/// `grad(p) . n` per boundary face, using the constant P1 gradient of the adjacent tet.
pub fn boundary_flux(mesh: &Mesh, p: &[f64]) -> Vec<f64> {
    (0..mesh.face_count())
        .map(|f| {
            let t = mesh.face_to_tet()[f];
            let (grads, _) = tet_gradients(mesh.tet_points(t));
            let tet = mesh.tets()[t];
            let mut g = [0.0; 3];
            for (a, &v) in tet.iter().enumerate() {
                for d in 0..3 {
                    g[d] += p[v] * grads[a][d];
                }
            }
            dot(g, mesh.face(f).normal)
        })
        .collect()
}

/// `grad(p) . n` per boundary face recovered from the discrete residual: at a
/// boundary vertex `v`, `(K p)_v + 2 (M (u - u_ref))_v` equals the integral
/// of the flux against the hat function of `v`. Dividing by a third of the
/// vertex's boundary star area and averaging over the face's corners gives a
/// face value that reproduces the exact first variation of the discrete cost.
pub fn consistent_boundary_flux(
    mesh: &Mesh,
    stiffness: &CsrMatrix,
    mass: &CsrMatrix,
    u: &[f64],
    u_ref: &[f64],
    p: &[f64],
) -> Vec<f64> {
    let e: Vec<f64> = u.iter().zip(u_ref).map(|(a, b)| 2.0 * (a - b)).collect();
    let me = mass.mul_vec(&e);
    let kp = stiffness.mul_vec(p);
    let mut star = vec![0.0; mesh.vertex_count()];
    for (f, face) in mesh.boundary_faces().iter().enumerate() {
        for &v in face {
            star[v] += mesh.face(f).area;
        }
    }
    mesh.boundary_faces().iter().map(|face| face.iter().map(|&v| (kp[v] + me[v]) / star[v]).sum()).collect()
}

/// How the optimizer turns the adjoint into a per-face flux.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FluxRecovery {
    /// Gradient of the adjacent tet, as in [`boundary_flux`].
    Gradient,
    /// Residual-based recovery, as in [`consistent_boundary_flux`].
    #[default]
    Consistent,
}

impl FluxRecovery {
    pub fn as_str(&self) -> &'static str {
        match self {
            FluxRecovery::Gradient => "gradient",
            FluxRecovery::Consistent => "consistent",
        }
    }
}

impl std::str::FromStr for FluxRecovery {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "gradient" => Ok(FluxRecovery::Gradient),
            "consistent" => Ok(FluxRecovery::Consistent),
            other => Err(format!("unknown flux recovery '{other}', expected gradient or consistent")),
        }
    }
}

/// `sum_{F in S_i} A_F * flux_F` for every region.
pub fn region_flux_integrals(mesh: &Mesh, partition: &BoundaryPartition, flux: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; partition.materials()];
    for (f, &value) in flux.iter().enumerate() {
        out[partition.label(f) - 1] += mesh.face(f).area * value;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalAlpha {
    pub control: ControlValues,
    /// `false` for regions without faces; those values sit at `clamp(0)`.
    pub active: Vec<bool>,
}

/// Projected stationary control value of one region: `clamp(integral / (2 lambda))`.
///
/// `integral` is the region integral of the flux of `q = -p`, the adjoint
/// with source `+2 (u - u_ref)`; see [`optimal_alpha`].
pub fn project_stationary_value(integral: f64, lambda: f64, lower: f64, upper: f64) -> f64 {
    (integral / (2.0 * lambda)).max(lower).min(upper)
}

/// Projected stationary control values for a fixed partition.
///
/// `flux` comes from the adjoint `K p = -2 M (u - u_ref)`. Setting the
/// derivative of the cost in `alpha_i` to zero gives
/// `alpha_i = -(1/(2 lambda)) sum_{F in S_i} A_F flux_F`, so the region
/// integrals enter [`project_stationary_value`] negated.
pub fn optimal_alpha(
    mesh: &Mesh,
    partition: &BoundaryPartition,
    flux: &[f64],
    lambda: f64,
    bounds: &ControlValues,
) -> Result<OptimalAlpha, ControlError> {
    if !(lambda > 0.0) {
        return Err(ControlError::ZeroLambda(lambda));
    }
    if bounds.len() != partition.materials() {
        return Err(ControlError::WrongLength { expected: partition.materials(), got: bounds.len() });
    }
    let integrals = region_flux_integrals(mesh, partition, flux);
    let hist = partition.histogram();
    let mut alpha = Vec::with_capacity(bounds.len());
    let mut active = Vec::with_capacity(bounds.len());
    for i in 0..bounds.len() {
        if hist[i] == 0 {
            alpha.push(bounds.clamp(i, 0.0));
            active.push(false);
        } else {
            alpha.push(project_stationary_value(-integrals[i], lambda, bounds.lower[i], bounds.upper[i]));
            active.push(true);
        }
    }
    Ok(OptimalAlpha {
        control: ControlValues { alpha, lower: bounds.lower.clone(), upper: bounds.upper.clone() },
        active,
    })
}

/// Mesh, operators and target shared by every state evaluation.
#[derive(Debug, Clone)]
pub struct ControlProblem {
    pub mesh: Mesh,
    pub stiffness: CsrMatrix,
    pub mass: CsrMatrix,
    pub u_ref: NodalField,
    pub load: Vec<f64>,
    pub solver: SolverOptions,
}

/// State and cost of one design.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub u: NodalField,
    pub cost: f64,
}

impl ControlProblem {
    pub fn new(mesh: Mesh, u_ref: NodalField, source: &Source, solver: SolverOptions) -> Result<Self, FemError> {
        if u_ref.len() != mesh.vertex_count() {
            return Err(FemError::SizeMismatch { expected: mesh.vertex_count(), got: u_ref.len() });
        }
        let stiffness = assemble_stiffness(&mesh);
        let mass = assemble_mass(&mesh);
        let load = source.load_vector(&mesh, Some(&mass));
        Ok(ControlProblem { mesh, stiffness, mass, u_ref, load, solver })
    }

    /// State for boundary data `sum alpha_i chi_{S_i}` (projected onto P1).
    pub fn state(&self, partition: &BoundaryPartition, alpha: &[f64]) -> Result<NodalField, FemError> {
        let g = project_boundary_control(&self.mesh, partition, alpha)?;
        solve_with_load(&self.mesh, &self.stiffness, &g, &self.load, self.solver)
    }

    pub fn cost(&self, u: &[f64], alpha: &[f64], lambda: f64) -> f64 {
        cost(&self.mass, u, &self.u_ref, alpha, lambda)
    }

    pub fn evaluate(&self, partition: &BoundaryPartition, alpha: &[f64], lambda: f64) -> Result<Evaluation, FemError> {
        let u = self.state(partition, alpha)?;
        let cost = self.cost(&u, alpha, lambda);
        if !cost.is_finite() {
            return Err(FemError::NonFinite("cost"));
        }
        Ok(Evaluation { u, cost })
    }

    pub fn adjoint(&self, u: &[f64]) -> Result<NodalField, FemError> {
        solve_adjoint(&self.mesh, &self.stiffness, &self.mass, u, &self.u_ref, self.solver)
    }

    pub fn flux(&self, p: &[f64]) -> Vec<f64> {
        boundary_flux(&self.mesh, p)
    }

    pub fn recovered_flux(&self, recovery: FluxRecovery, u: &[f64], p: &[f64]) -> Vec<f64> {
        match recovery {
            FluxRecovery::Gradient => self.flux(p),
            FluxRecovery::Consistent => {
                consistent_boundary_flux(&self.mesh, &self.stiffness, &self.mass, u, &self.u_ref, p)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointOptions {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub flux: FluxRecovery,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        FixedPointOptions { damping: 0.5, tol: 1e-8, max_iter: 100, flux: FluxRecovery::default() }
    }
}

#[derive(Debug, Clone)]
pub struct FixedPointResult {
    pub control: ControlValues,
    pub active: Vec<bool>,
    pub iterations: usize,
    pub converged: bool,
    /// Last `max |alpha_new - alpha_old|` before damping.
    pub last_change: f64,
}

/// Damped fixed-point iteration `alpha <- (1-theta) alpha + theta * optimal_alpha(alpha)`
/// for the coupled state/adjoint/control system at a fixed partition.
pub fn fixed_point_alpha(
    problem: &ControlProblem,
    partition: &BoundaryPartition,
    start: &ControlValues,
    lambda: f64,
    opts: FixedPointOptions,
) -> Result<FixedPointResult, ControlError> {
    if !(lambda > 0.0) {
        return Err(ControlError::ZeroLambda(lambda));
    }
    let mut control = start.clone();
    for i in 0..control.len() {
        control.alpha[i] = control.clamp(i, control.alpha[i]);
    }
    let mut active = vec![true; control.len()];
    let mut last_change = f64::INFINITY;
    for it in 0..opts.max_iter {
        let u = problem.state(partition, &control.alpha)?;
        let p = problem.adjoint(&u)?;
        let flux = problem.recovered_flux(opts.flux, &u, &p);
        let target = optimal_alpha(&problem.mesh, partition, &flux, lambda, &control)?;
        active = target.active;
        last_change = control.alpha.iter().zip(&target.control.alpha).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if last_change <= opts.tol {
            return Ok(FixedPointResult { control, active, iterations: it, converged: true, last_change });
        }
        for i in 0..control.len() {
            let blended = (1.0 - opts.damping) * control.alpha[i] + opts.damping * target.control.alpha[i];
            control.alpha[i] = control.clamp(i, blended);
        }
    }
    Ok(FixedPointResult { control, active, iterations: opts.max_iter, converged: false, last_change })
}
