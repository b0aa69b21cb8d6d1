//! Piecewise-constant vector level sets on the boundary and the
//! multi-material level-set descent loop.

use thiserror::Error;

use crate::control::{fixed_point_alpha, ControlError, ControlProblem, ControlValues, FixedPointOptions, FluxRecovery};
use crate::fem::{FemError, NodalField};
use crate::partition::BoundaryPartition;
use crate::topo::{build_topo_fields, FaceVectors, SectorGeometry, TopoError, TopoFields};

/// One vector in `R^{M-1}` per boundary face.
pub type LevelSetField = FaceVectors;

/// Vectors at or below this norm are left unnormalized.
pub const NORMALIZE_FLOOR: f64 = 1e-14;

#[derive(Debug, Error)]
pub enum LevelSetError {
    #[error("step parameter must lie in (0, 1], got {0}")]
    InvalidStep(f64),
    #[error("field sizes differ: {0}")]
    SizeMismatch(String),
    #[error("level-set initialization needs a nonsingular system")]
    SingularInit,
    #[error("cost became non-finite at iteration {iteration} (kappa {kappa:e}, {changed} faces relabelled)")]
    NonFiniteCost { iteration: usize, kappa: f64, changed: usize },
    #[error("invalid optimizer setting: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Topo(#[from] TopoError),
    #[error(transparent)]
    Control(#[from] ControlError),
}

/// Constant level set that places every face in the last region.
///
/// For `M = 3` this solves `[n^{13}; n^{23}] z = (1, 1)`; for `M = 2` it is `psi = 1`.
pub fn init_levelset(geom: &SectorGeometry, faces: usize) -> Result<LevelSetField, LevelSetError> {
    let z = match geom.materials() {
        2 => vec![1.0],
        3 => {
            let (a, b) = (geom.normal(1, 3), geom.normal(2, 3));
            let det = a[0] * b[1] - a[1] * b[0];
            if det.abs() < 1e-14 {
                return Err(LevelSetError::SingularInit);
            }
            vec![(b[1] - a[1]) / det, (a[0] - b[0]) / det]
        }
        m => return Err(TopoError::UnsupportedMaterialCount(m).into()),
    };
    Ok(FaceVectors::filled(faces, &z))
}

pub fn partition_from_levelset(geom: &SectorGeometry, psi: &LevelSetField) -> BoundaryPartition {
    let labels = psi.iter().map(|v| geom.sector_of(v)).collect();
    BoundaryPartition::new(labels, geom.materials()).expect("sector labels lie in 1..=M")
}

/// How `psi` and `G` are scaled before blending.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Use the raw fields.
    None,
    /// Unit Euclidean norm on every face.
    PerFace,
    /// Unit area-weighted L2 norm over the whole boundary.
    Global,
}

impl Normalization {
    pub fn as_str(&self) -> &'static str {
        match self {
            Normalization::None => "none",
            Normalization::PerFace => "face",
            Normalization::Global => "global",
        }
    }
}

impl std::str::FromStr for Normalization {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(Normalization::None),
            "face" => Ok(Normalization::PerFace),
            "global" => Ok(Normalization::Global),
            other => Err(format!("unknown normalization '{other}' (expected none, face or global)")),
        }
    }
}

fn euclid(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `sqrt(sum_F A_F |v_F|^2)`.
pub fn boundary_l2_norm(v: &FaceVectors, areas: &[f64]) -> f64 {
    v.iter().zip(areas).map(|(x, a)| a * x.iter().map(|c| c * c).sum::<f64>()).sum::<f64>().sqrt()
}

/// Scaled copy of `v`; vectors (or fields) with norm at or below
/// [`NORMALIZE_FLOOR`] are returned unchanged.
pub fn normalize_field(v: &FaceVectors, mode: Normalization, areas: &[f64]) -> FaceVectors {
    match mode {
        Normalization::None => v.clone(),
        Normalization::PerFace => {
            let mut out = v.clone();
            for f in 0..v.len() {
                let n = euclid(v.get(f));
                if n > NORMALIZE_FLOOR {
                    out.get_mut(f).iter_mut().for_each(|x| *x /= n);
                }
            }
            out
        }
        Normalization::Global => {
            let n = boundary_l2_norm(v, areas);
            let mut out = v.clone();
            if n > NORMALIZE_FLOOR {
                let data: Vec<f64> = v.as_flat().iter().map(|x| x / n).collect();
                out = FaceVectors::from_flat(v.dim(), data);
            }
            out
        }
    }
}

/// `psi' = (1 - kappa) psi^ + kappa G^`, where `^` is the scaling selected by `mode`.
/// `areas` weights the boundary L2 norm and is only read for [`Normalization::Global`].
pub fn update_levelset(
    psi: &LevelSetField,
    g: &FaceVectors,
    kappa: f64,
    mode: Normalization,
    areas: &[f64],
) -> Result<LevelSetField, LevelSetError> {
    if !(kappa > 0.0 && kappa <= 1.0) {
        return Err(LevelSetError::InvalidStep(kappa));
    }
    if psi.len() != g.len() || psi.dim() != g.dim() {
        return Err(LevelSetError::SizeMismatch(format!(
            "level set {}x{}, steering field {}x{}",
            psi.len(),
            psi.dim(),
            g.len(),
            g.dim()
        )));
    }
    if mode == Normalization::Global && areas.len() != psi.len() {
        return Err(LevelSetError::SizeMismatch(format!("{} faces but {} areas", psi.len(), areas.len())));
    }
    let a = normalize_field(psi, mode, areas);
    let b = normalize_field(g, mode, areas);
    let data = a.as_flat().iter().zip(b.as_flat()).map(|(x, y)| (1.0 - kappa) * x + kappa * y).collect();
    Ok(FaceVectors::from_flat(psi.dim(), data))
}

/// Faces whose label can still change under repeated updates with `g`: the
/// blend converges to `g`, so only a nonzero `g` outside the current sector moves a face.
pub fn movable_faces(geom: &SectorGeometry, partition: &BoundaryPartition, g: &FaceVectors) -> usize {
    (0..partition.len())
        .filter(|&f| {
            let v = g.get(f);
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            n > NORMALIZE_FLOOR && geom.sector_of(v) != partition.label(f)
        })
        .count()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    /// Initial (and maximal) step parameter.
    pub kappa0: f64,
    pub kappa_min: f64,
    /// Outer iterations `N_max`.
    pub max_iter: usize,
    /// Candidate steps per outer iteration `N_step`.
    pub max_step_tries: usize,
    pub normalization: Normalization,
    pub flux: FluxRecovery,
    /// Repeat the update with the same steering field until at least one label
    /// changes before evaluating a candidate.
    pub advance_until_change: bool,
    pub max_substeps: usize,
    /// After a rejected candidate, retry with the better-ranked half of its
    /// label changes, then with single changes further down the ranking,
    /// before moving on.
    pub subset_backtracking: bool,
    /// Single changes tried after the bisection reaches one face.
    pub single_tries: usize,
    /// Largest multiple of the first-change sub-step count used to widen a
    /// proposal before `kappa` is halved; 1 disables widening.
    pub max_horizon: usize,
    pub rel_cost_tol: f64,
    pub lambda: f64,
    pub optimize_alpha: bool,
    pub fixed_point: FixedPointOptions,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kappa0: 0.1,
            kappa_min: 1e-6,
            max_iter: 100,
            max_step_tries: 100,
            normalization: Normalization::None,
            flux: FluxRecovery::default(),
            advance_until_change: true,
            max_substeps: 20_000,
            subset_backtracking: true,
            single_tries: 8,
            max_horizon: 64,
            rel_cost_tol: 1e-10,
            lambda: 0.0,
            optimize_alpha: false,
            fixed_point: FixedPointOptions::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), LevelSetError> {
        if !(self.kappa0 > 0.0 && self.kappa0 <= 1.0) {
            return Err(LevelSetError::InvalidConfig(format!("kappa0 must lie in (0, 1], got {}", self.kappa0)));
        }
        if !(self.kappa_min > 0.0) {
            return Err(LevelSetError::InvalidConfig("kappa_min must be positive".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(LevelSetError::InvalidConfig(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.optimize_alpha && self.lambda <= 0.0 {
            return Err(LevelSetError::InvalidConfig("optimizing the control values needs lambda > 0".into()));
        }
        if self.max_horizon == 0 {
            return Err(LevelSetError::InvalidConfig("max_horizon must be at least 1".into()));
        }
        if self.max_step_tries == 0 {
            return Err(LevelSetError::InvalidConfig("max_step_tries must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub cost: f64,
    pub kappa: f64,
    pub accepted: bool,
    /// Updates applied to reach the candidate (1 without sub-stepping).
    pub substeps: usize,
    /// Faces whose label differs from the previous accepted design.
    pub changed_faces: usize,
    pub region_areas: Vec<f64>,
    pub alpha: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    MaxIterations,
    StepTooSmall,
    NoDescent,
    /// No face can change its label under the current steering field.
    Stationary,
    CostStagnation,
    ZeroCost,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::MaxIterations => "max_iterations",
            Termination::StepTooSmall => "step_too_small",
            Termination::NoDescent => "no_descent",
            Termination::Stationary => "stationary",
            Termination::CostStagnation => "cost_stagnation",
            Termination::ZeroCost => "zero_cost",
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimState {
    pub iteration: usize,
    pub psi: LevelSetField,
    pub partition: BoundaryPartition,
    pub control: ControlValues,
    pub u: NodalField,
    pub cost: f64,
    pub initial_cost: f64,
    pub kappa: f64,
    pub accepted_steps: usize,
    pub history: Vec<HistoryEntry>,
    pub termination: Termination,
}

impl OptimState {
    pub fn accepted_costs(&self) -> Vec<f64> {
        self.history.iter().filter(|h| h.accepted).map(|h| h.cost).collect()
    }
}

/// Design and sensitivities handed to an observer.
pub struct IterationView<'a> {
    pub iteration: usize,
    pub accepted_steps: usize,
    pub cost: f64,
    pub psi: &'a LevelSetField,
    pub partition: &'a BoundaryPartition,
    pub alpha: &'a [f64],
    pub flux: &'a [f64],
    pub fields: &'a TopoFields,
    /// Every row recorded so far, including rejected candidates.
    pub history: &'a [HistoryEntry],
    pub is_final: bool,
}

fn changed(a: &BoundaryPartition, b: &BoundaryPartition) -> usize {
    a.labels().iter().zip(b.labels()).filter(|(x, y)| x != y).count()
}

/// Faces whose label differs between `from` and `to`, most promising first:
/// ordered by the predicted change `D^{lk} |face|` of moving from `l` to `k`.
fn rank_changes(
    geom: &SectorGeometry,
    from: &BoundaryPartition,
    to: &BoundaryPartition,
    t: &FaceVectors,
    areas: &[f64],
) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = (0..from.len())
        .filter(|&f| from.label(f) != to.label(f))
        .map(|f| {
            let (l, k) = (from.label(f), to.label(f));
            let slot = (1..=geom.materials()).filter(|&j| j != l).position(|j| j == k).expect("k differs from l");
            (t.get(f)[slot] * areas[f], f)
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.into_iter().map(|(_, f)| f).collect()
}

/// Applies the update with a fixed steering field, repeatedly if configured,
/// until the induced partition differs from `current`. Returns `None` if no
/// label changed within the sub-step budget.
fn propose(
    geom: &SectorGeometry,
    areas: &[f64],
    psi: &LevelSetField,
    g: &FaceVectors,
    current: &BoundaryPartition,
    kappa: f64,
    horizon: usize,
    config: &OptimizerConfig,
) -> Result<Option<(LevelSetField, BoundaryPartition, usize)>, LevelSetError> {
    let budget = if config.advance_until_change { config.max_substeps.max(1) } else { 1 };
    let mut next = psi.clone();
    let mut first_change = None;
    for step in 1..=budget {
        next = update_levelset(&next, g, kappa, config.normalization, areas)?;
        let partition = partition_from_levelset(geom, &next);
        if first_change.is_none() && partition != *current {
            first_change = Some(step);
        }
        if let Some(first) = first_change {
            if step >= first * horizon {
                return Ok(Some((next, partition, step)));
            }
        }
    }
    if first_change.is_some() {
        let partition = partition_from_levelset(geom, &next);
        return Ok(Some((next, partition, budget)));
    }
    if config.advance_until_change {
        Ok(None)
    } else {
        let partition = partition_from_levelset(geom, &next);
        Ok(Some((next, partition, 1)))
    }
}

/// Runs the level-set descent from `psi0` with control values `control`.
///
/// Each outer iteration solves the adjoint at the current design, builds
/// `T^l` and `G`, and tries candidate steps, halving `kappa` after each
/// rejection. A candidate is accepted only if it strictly lowers the cost.
pub fn optimize(
    problem: &ControlProblem,
    geom: &SectorGeometry,
    psi0: LevelSetField,
    control: ControlValues,
    config: &OptimizerConfig,
    observer: &mut dyn FnMut(&IterationView),
) -> Result<OptimState, LevelSetError> {
    config.validate()?;
    let faces = problem.mesh.face_count();
    if psi0.len() != faces || psi0.dim() != geom.dim() {
        return Err(LevelSetError::SizeMismatch(format!(
            "level set has {}x{} entries, mesh needs {}x{}",
            psi0.len(),
            psi0.dim(),
            faces,
            geom.dim()
        )));
    }
    if control.len() != geom.materials() {
        return Err(ControlError::WrongLength { expected: geom.materials(), got: control.len() }.into());
    }
    let lambda = config.lambda;
    let areas = problem.mesh.face_areas();
    let mut psi = psi0;
    let mut partition = partition_from_levelset(geom, &psi);
    let mut control = control;
    let first = problem.evaluate(&partition, &control.alpha, lambda)?;
    let mut u = first.u;
    let mut cost = first.cost;
    let initial_cost = cost;
    let mut history = vec![HistoryEntry {
        iteration: 0,
        cost,
        kappa: config.kappa0,
        accepted: true,
        substeps: 0,
        changed_faces: 0,
        region_areas: partition.region_areas(&problem.mesh),
        alpha: control.alpha.clone(),
    }];
    let mut kappa = config.kappa0;
    let mut accepted_steps = 0;
    let mut termination = Termination::MaxIterations;
    let mut iteration = 0;

    while iteration < config.max_iter {
        if cost == 0.0 {
            termination = Termination::ZeroCost;
            break;
        }
        let p = problem.adjoint(&u)?;
        let flux = problem.recovered_flux(config.flux, &u, &p);
        let fields = build_topo_fields(geom, &partition, &control.alpha, &flux);
        observer(&IterationView {
            iteration,
            accepted_steps,
            cost,
            psi: &psi,
            partition: &partition,
            alpha: &control.alpha,
            flux: &flux,
            fields: &fields,
            history: &history,
            is_final: false,
        });
        if movable_faces(geom, &partition, &fields.g) == 0 {
            termination = Termination::Stationary;
            break;
        }
        iteration += 1;

        let mut accepted = false;
        let mut stop = None;
        // full candidate level set, its sub-step count and its label changes
        // ranked by predicted cost change
        let mut proposal: Option<(LevelSetField, usize, Vec<usize>)> = None;
        // candidate is ranked[offset..offset + keep]
        let mut keep = 0;
        let mut offset = 0;
        let mut horizon = 1;
        for _ in 0..config.max_step_tries {
            if proposal.is_none() {
                let Some((full_psi, full_partition, substeps)) =
                    propose(geom, &areas, &psi, &fields.g, &partition, kappa, horizon, config)?
                else {
                    stop = Some(Termination::Stationary);
                    break;
                };
                let ranked = rank_changes(geom, &partition, &full_partition, &fields.t, &areas);
                keep = ranked.len();
                offset = 0;
                proposal = Some((full_psi, substeps, ranked));
            }
            let (full_psi, substeps, ranked) = proposal.as_ref().expect("proposal was just built");
            let substeps = *substeps;
            let cand_psi = if keep == ranked.len() {
                full_psi.clone()
            } else {
                let mut mixed = psi.clone();
                for &f in &ranked[offset..offset + keep] {
                    mixed.get_mut(f).copy_from_slice(full_psi.get(f));
                }
                mixed
            };
            let cand_partition = partition_from_levelset(geom, &cand_psi);
            let n_changed = changed(&cand_partition, &partition);
            let eval = problem.evaluate(&cand_partition, &control.alpha, lambda).map_err(|e| match e {
                FemError::NonFinite(_) => LevelSetError::NonFiniteCost { iteration, kappa, changed: n_changed },
                other => other.into(),
            })?;
            if eval.cost < cost {
                let mut new_cost = eval.cost;
                let mut new_u = eval.u;
                let mut cand_psi = cand_psi;
                let mut cand_partition = cand_partition;
                let mut n_changed = n_changed;
                // an accepted leading subset is grown while the cost keeps dropping
                if offset == 0 && keep < ranked.len() {
                    let mut grown = keep;
                    while grown < ranked.len() {
                        grown = (2 * grown).min(ranked.len());
                        let mut wider = psi.clone();
                        for &f in &ranked[..grown] {
                            wider.get_mut(f).copy_from_slice(full_psi.get(f));
                        }
                        let wider_partition = partition_from_levelset(geom, &wider);
                        let wider_eval = problem.evaluate(&wider_partition, &control.alpha, lambda)?;
                        if wider_eval.cost >= new_cost {
                            break;
                        }
                        new_cost = wider_eval.cost;
                        new_u = wider_eval.u;
                        n_changed = changed(&wider_partition, &partition);
                        cand_psi = wider;
                        cand_partition = wider_partition;
                    }
                }
                if config.optimize_alpha {
                    let fp = fixed_point_alpha(problem, &cand_partition, &control, lambda, config.fixed_point)?;
                    let refit = problem.evaluate(&cand_partition, &fp.control.alpha, lambda)?;
                    if refit.cost < new_cost {
                        control = fp.control;
                        new_cost = refit.cost;
                        new_u = refit.u;
                    }
                }
                let rel_change = (cost - new_cost).abs() / new_cost.abs().max(f64::MIN_POSITIVE);
                psi = cand_psi;
                partition = cand_partition;
                u = new_u;
                cost = new_cost;
                accepted_steps += 1;
                history.push(HistoryEntry {
                    iteration,
                    cost,
                    kappa,
                    accepted: true,
                    substeps,
                    changed_faces: n_changed,
                    region_areas: partition.region_areas(&problem.mesh),
                    alpha: control.alpha.clone(),
                });
                kappa = (2.0 * kappa).min(config.kappa0);
                accepted = true;
                if rel_change < config.rel_cost_tol {
                    stop = Some(Termination::CostStagnation);
                }
                break;
            }
            history.push(HistoryEntry {
                iteration,
                cost: eval.cost,
                kappa,
                accepted: false,
                substeps,
                changed_faces: n_changed,
                region_areas: cand_partition.region_areas(&problem.mesh),
                alpha: control.alpha.clone(),
            });
            if config.subset_backtracking {
                let len = proposal.as_ref().map_or(0, |p| p.2.len());
                if keep > 1 {
                    keep /= 2;
                    continue;
                }
                if offset + 1 < len.min(config.single_tries + 1) {
                    offset += 1;
                    continue;
                }
            }
            proposal = None;
            if horizon < config.max_horizon {
                horizon *= 2;
                continue;
            }
            horizon = 1;
            kappa *= 0.5;
            if kappa < config.kappa_min {
                stop = Some(Termination::StepTooSmall);
                break;
            }
        }
        if let Some(t) = stop {
            termination = t;
            break;
        }
        if !accepted {
            termination = Termination::NoDescent;
            break;
        }
    }

    let p = problem.adjoint(&u)?;
    let flux = problem.recovered_flux(config.flux, &u, &p);
    let fields = build_topo_fields(geom, &partition, &control.alpha, &flux);
    observer(&IterationView {
        iteration,
        accepted_steps,
        cost,
        psi: &psi,
        partition: &partition,
        alpha: &control.alpha,
        flux: &flux,
        fields: &fields,
        history: &history,
        is_final: true,
    });

    Ok(OptimState {
        iteration,
        psi,
        partition,
        control,
        u,
        cost,
        initial_cost,
        kappa,
        accepted_steps,
        history,
        termination,
    })
}
