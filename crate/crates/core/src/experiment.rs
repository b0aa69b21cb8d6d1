//! Configuration-driven experiments: mesh and reference construction, the
//! optimization run with its CSV history, VTK snapshots and summary, plus the
//! mesh report and the finite-difference check used by the CLI.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{ControlError, ControlProblem, ControlValues, FixedPointOptions, FluxRecovery};
use crate::fem::{project_boundary_control, solve_dirichlet, FemError, NodalField, SolverOptions, Source};
use crate::levelset::{
    init_levelset, optimize, HistoryEntry, IterationView, LevelSetError, Normalization, OptimizerConfig,
};
use crate::mesh::{generate_ellipsoid_mesh, Mesh, MeshError};
use crate::msh::read_msh;
use crate::partition::{BoundaryPartition, PartitionError};
use crate::topo::{compare_with_fd, FdComparison, SectorGeometry, TopoError};
use crate::vtk::{write_boundary_snapshot, BoundarySnapshot, VtkError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("cannot read config {path}: {source}")]
    ConfigRead { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {message}")]
    ConfigParse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("unknown reference preset '{0}', expected two_material or three_material")]
    UnknownPreset(String),
    #[error("bad predicate '{expr}': {message}")]
    Predicate { expr: String, message: String },
    #[error("cannot write {path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Topo(#[from] TopoError),
    #[error(transparent)]
    LevelSet(#[from] LevelSetError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Vtk(#[from] VtkError),
}

type Result<T> = std::result::Result<T, ExperimentError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshConfig {
    /// Gmsh 2.2 ASCII file; relative paths are resolved against the config file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    pub axes: [f64; 3],
    pub subdivisions: usize,
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig { file: None, axes: [1.0, 0.5, 1.0], subdivisions: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemConfig {
    pub materials: usize,
    pub alpha: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub upper: Option<Vec<f64>>,
    pub lambda: f64,
    pub optimize_alpha: bool,
    /// Constant right-hand side `f`.
    pub source: f64,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig {
            materials: 3,
            alpha: vec![0.1, 10.0, 3.0],
            lower: None,
            upper: None,
            lambda: 0.0,
            optimize_alpha: false,
            source: 1.0,
        }
    }
}

/// One labelling rule: a face gets `label` when all conditions hold at its centroid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleConfig {
    pub label: usize,
    pub when: Vec<String>,
}

/// Reference partition: a named preset or explicit rules.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReferenceConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    /// Rules tried in order; faces matching none get `otherwise`.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub rule: Vec<RuleConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub otherwise: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NormalizeSetting {
    Flag(bool),
    Mode(String),
}

impl NormalizeSetting {
    fn resolve(&self) -> Result<Normalization> {
        match self {
            NormalizeSetting::Flag(true) => Ok(Normalization::PerFace),
            NormalizeSetting::Flag(false) => Ok(Normalization::None),
            NormalizeSetting::Mode(s) => s.parse().map_err(ExperimentError::Invalid),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub kappa0: f64,
    pub kappa_min: f64,
    pub max_iter: usize,
    pub max_step_tries: usize,
    pub normalize: NormalizeSetting,
    pub flux: String,
    pub max_substeps: usize,
    pub subset_backtracking: bool,
    pub single_tries: usize,
    pub max_horizon: usize,
    pub rel_cost_tol: f64,
    pub fixed_point_damping: f64,
    pub fixed_point_tol: f64,
    pub fixed_point_max_iter: usize,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let d = OptimizerConfig::default();
        OptimizerSection {
            kappa0: d.kappa0,
            kappa_min: d.kappa_min,
            max_iter: d.max_iter,
            max_step_tries: d.max_step_tries,
            normalize: NormalizeSetting::Mode(d.normalization.as_str().into()),
            flux: d.flux.as_str().into(),
            max_substeps: d.max_substeps,
            subset_backtracking: d.subset_backtracking,
            single_tries: d.single_tries,
            max_horizon: d.max_horizon,
            rel_cost_tol: d.rel_cost_tol,
            fixed_point_damping: d.fixed_point.damping,
            fixed_point_tol: d.fixed_point.tol,
            fixed_point_max_iter: d.fixed_point.max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub rel_tol: f64,
    pub max_iter_factor: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverOptions::default();
        SolverSection { rel_tol: d.rel_tol, max_iter_factor: d.max_iter_factor }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub directory: PathBuf,
    /// Snapshot after every this many accepted steps; 0 keeps only start and end.
    pub snapshot_every: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { directory: PathBuf::from("output"), snapshot_every: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub mesh: MeshConfig,
    pub problem: ProblemConfig,
    pub reference: ReferenceConfig,
    pub optimizer: OptimizerSection,
    pub solver: SolverSection,
    pub output: OutputSection,
    /// Directory relative paths in the config are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mesh: MeshConfig::default(),
            problem: ProblemConfig::default(),
            reference: ReferenceConfig { preset: Some("two_material".into()), ..Default::default() },
            optimizer: OptimizerSection::default(),
            solver: SolverSection::default(),
            output: OutputSection::default(),
            base_dir: PathBuf::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ExperimentError::ConfigRead { path: path.to_path_buf(), source })?;
        let mut config = Self::from_toml_str(&text)
            .map_err(|message| ExperimentError::ConfigParse { path: path.to_path_buf(), message })?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.problem;
        let m = p.materials;
        if !(2..=3).contains(&m) {
            return Err(ExperimentError::Invalid(format!("materials must be 2 or 3, got {m}")));
        }
        if p.alpha.len() != m {
            return Err(ExperimentError::Invalid(format!("alpha needs {m} values, got {}", p.alpha.len())));
        }
        self.control_values()?;
        if !(p.lambda >= 0.0) {
            return Err(ExperimentError::Invalid(format!("lambda must be >= 0, got {}", p.lambda)));
        }
        if !p.source.is_finite() {
            return Err(ExperimentError::Invalid("source must be finite".into()));
        }
        if self.mesh.file.is_none() {
            if self.mesh.axes.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
                return Err(ExperimentError::Invalid("mesh axes must be positive".into()));
            }
            if self.mesh.subdivisions < 1 {
                return Err(ExperimentError::Invalid("mesh subdivisions must be at least 1".into()));
            }
        }
        self.reference_labeler()?;
        self.optimizer_config()?.validate()?;
        if !(self.solver.rel_tol > 0.0) || self.solver.max_iter_factor == 0 {
            return Err(ExperimentError::Invalid("solver tolerance and iteration factor must be positive".into()));
        }
        Ok(())
    }

    pub fn control_values(&self) -> Result<ControlValues> {
        let p = &self.problem;
        let m = p.alpha.len();
        let lower = p.lower.clone().unwrap_or_else(|| vec![f64::NEG_INFINITY; m]);
        let upper = p.upper.clone().unwrap_or_else(|| vec![f64::INFINITY; m]);
        Ok(ControlValues::new(p.alpha.clone(), lower, upper)?)
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions { rel_tol: self.solver.rel_tol, max_iter_factor: self.solver.max_iter_factor }
    }

    pub fn optimizer_config(&self) -> Result<OptimizerConfig> {
        let o = &self.optimizer;
        let flux: FluxRecovery = o.flux.parse().map_err(ExperimentError::Invalid)?;
        Ok(OptimizerConfig {
            kappa0: o.kappa0,
            kappa_min: o.kappa_min,
            max_iter: o.max_iter,
            max_step_tries: o.max_step_tries,
            normalization: o.normalize.resolve()?,
            flux,
            advance_until_change: o.max_substeps > 1,
            max_substeps: o.max_substeps.max(1),
            subset_backtracking: o.subset_backtracking,
            single_tries: o.single_tries,
            max_horizon: o.max_horizon,
            rel_cost_tol: o.rel_cost_tol,
            lambda: self.problem.lambda,
            optimize_alpha: self.problem.optimize_alpha,
            fixed_point: FixedPointOptions {
                damping: o.fixed_point_damping,
                tol: o.fixed_point_tol,
                max_iter: o.fixed_point_max_iter,
                flux,
            },
        })
    }

    fn reference_labeler(&self) -> Result<Labeler> {
        let r = &self.reference;
        let m = self.problem.materials;
        let labeler = match (&r.preset, r.rule.is_empty() && r.otherwise.is_none()) {
            (Some(name), true) => Labeler::Preset(preset_by_name(name)?),
            (None, false) => {
                let rules = r
                    .rule
                    .iter()
                    .map(|rule| {
                        let conds = rule.when.iter().map(|c| Condition::parse(c)).collect::<Result<Vec<_>>>()?;
                        Ok((rule.label, conds))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let otherwise = r.otherwise.ok_or_else(|| {
                    ExperimentError::Invalid("explicit reference rules need an 'otherwise' label".into())
                })?;
                Labeler::Rules { rules, otherwise }
            }
            (Some(_), false) => {
                return Err(ExperimentError::Invalid("give either a reference preset or rules, not both".into()))
            }
            (None, true) => {
                return Err(ExperimentError::Invalid("reference needs a preset or an 'otherwise' label".into()))
            }
        };
        if let Some(bad) = labeler.labels().into_iter().find(|&l| l == 0 || l > m) {
            return Err(ExperimentError::Invalid(format!("reference label {bad} outside 1..={m}")));
        }
        Ok(labeler)
    }
}

/// Named reference partitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Label 1 iff `z^2 + y^2 < 0.1`, else 2.
    TwoMaterial,
    /// Label 1 iff `x < 0` and `y < 0`, label 2 iff `x < 0` and `y > 0`, else 3.
    ThreeMaterial,
}

pub fn preset_by_name(name: &str) -> Result<Preset> {
    match name {
        "two_material" => Ok(Preset::TwoMaterial),
        "three_material" => Ok(Preset::ThreeMaterial),
        other => Err(ExperimentError::UnknownPreset(other.to_string())),
    }
}

impl Preset {
    pub fn label(self, [x, y, z]: [f64; 3]) -> usize {
        match self {
            Preset::TwoMaterial => {
                if z * z + y * y < 0.1 {
                    1
                } else {
                    2
                }
            }
            Preset::ThreeMaterial => {
                if x < 0.0 && y < 0.0 {
                    1
                } else if x < 0.0 && y > 0.0 {
                    2
                } else {
                    3
                }
            }
        }
    }

    fn labels(self) -> Vec<usize> {
        match self {
            Preset::TwoMaterial => vec![1, 2],
            Preset::ThreeMaterial => vec![1, 2, 3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Cmp {
    Lt,
    Le,
    Gt,
    Ge,
}

/// `sum_k c_k * coord_k^{e_k} <op> rhs` with exponents 1 or 2.
#[derive(Debug, Clone, PartialEq)]
struct Condition {
    terms: Vec<(f64, usize, i32)>,
    cmp: Cmp,
    rhs: f64,
}

impl Condition {
    /// Parses e.g. `x < 0`, `y^2 + z^2 < 0.1`, `2*x - y >= 0.5`.
    fn parse(expr: &str) -> Result<Condition> {
        let err = |message: &str| ExperimentError::Predicate { expr: expr.to_string(), message: message.to_string() };
        let (lhs, cmp, rhs) = [("<=", Cmp::Le), (">=", Cmp::Ge), ("<", Cmp::Lt), (">", Cmp::Gt)]
            .iter()
            .find_map(|(op, cmp)| expr.split_once(op).map(|(l, r)| (l, *cmp, r)))
            .ok_or_else(|| err("missing comparison operator"))?;
        let rhs: f64 = rhs.trim().parse().map_err(|_| err("right-hand side must be a number"))?;
        let normalized = lhs.replace('-', "+-");
        let mut terms = Vec::new();
        for raw in normalized.split('+').map(str::trim).filter(|t| !t.is_empty()) {
            let (sign, body) = match raw.strip_prefix('-') {
                Some(rest) => (-1.0, rest.trim()),
                None => (1.0, raw),
            };
            let (coef, var) = match body.split_once('*') {
                Some((c, v)) if c.trim().parse::<f64>().is_ok() => (c.trim().parse::<f64>().unwrap(), v.trim()),
                _ => (1.0, body),
            };
            let (var, power) = match var {
                v if v.ends_with("^2") => (&v[..v.len() - 2], 2),
                v => match v.split_once('*') {
                    Some((a, b)) if a.trim() == b.trim() => (a.trim(), 2),
                    _ => (v, 1),
                },
            };
            let axis = match var.trim() {
                "x" => 0,
                "y" => 1,
                "z" => 2,
                _ => return Err(err("terms must be x, y or z, optionally squared and scaled")),
            };
            terms.push((sign * coef, axis, power));
        }
        if terms.is_empty() {
            return Err(err("empty left-hand side"));
        }
        Ok(Condition { terms, cmp, rhs })
    }

    fn holds(&self, p: [f64; 3]) -> bool {
        let v: f64 = self.terms.iter().map(|&(c, axis, power)| c * p[axis].powi(power)).sum();
        match self.cmp {
            Cmp::Lt => v < self.rhs,
            Cmp::Le => v <= self.rhs,
            Cmp::Gt => v > self.rhs,
            Cmp::Ge => v >= self.rhs,
        }
    }
}

enum Labeler {
    Preset(Preset),
    Rules { rules: Vec<(usize, Vec<Condition>)>, otherwise: usize },
}

impl Labeler {
    fn label(&self, p: [f64; 3]) -> usize {
        match self {
            Labeler::Preset(preset) => preset.label(p),
            Labeler::Rules { rules, otherwise } => {
                rules.iter().find(|(_, conds)| conds.iter().all(|c| c.holds(p))).map_or(*otherwise, |(label, _)| *label)
            }
        }
    }

    fn labels(&self) -> Vec<usize> {
        match self {
            Labeler::Preset(preset) => preset.labels(),
            Labeler::Rules { rules, otherwise } => {
                rules.iter().map(|(l, _)| *l).chain(std::iter::once(*otherwise)).collect()
            }
        }
    }
}

pub fn build_mesh(config: &ExperimentConfig) -> Result<Mesh> {
    match &config.mesh.file {
        Some(file) => {
            let path = if file.is_absolute() { file.clone() } else { config.base_dir.join(file) };
            Ok(read_msh(&path)?)
        }
        None => {
            let [a1, a2, a3] = config.mesh.axes;
            Ok(generate_ellipsoid_mesh(a1, a2, a3, config.mesh.subdivisions)?)
        }
    }
}

/// Reference partition (labels evaluated at face centroids) and its state.
pub fn build_reference(config: &ExperimentConfig, mesh: &Mesh) -> Result<(BoundaryPartition, NodalField)> {
    let labeler = config.reference_labeler()?;
    let labels = mesh.faces().iter().map(|g| labeler.label(g.centroid)).collect();
    let partition = BoundaryPartition::new(labels, config.problem.materials)?;
    let stiffness = crate::fem::assemble_stiffness(mesh);
    let g = project_boundary_control(mesh, &partition, &config.problem.alpha)?;
    let u_ref =
        solve_dirichlet(mesh, &stiffness, &g, &Source::Constant(config.problem.source), None, config.solver_options())?;
    Ok((partition, u_ref))
}

/// Mesh, reference and assembled operators for one configuration.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub problem: ControlProblem,
    pub geometry: SectorGeometry,
    pub reference: BoundaryPartition,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let mesh = build_mesh(&config)?;
        let (reference, u_ref) = build_reference(&config, &mesh)?;
        let problem =
            ControlProblem::new(mesh, u_ref, &Source::Constant(config.problem.source), config.solver_options())?;
        let geometry = SectorGeometry::new(config.problem.materials)?;
        Ok(Experiment { config, problem, geometry, reference })
    }
}

/// Outcome of [`run`], also written as `summary.json`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunSummary {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub cost_ratio: f64,
    pub iterations: usize,
    pub accepted_steps: usize,
    pub termination: String,
    pub wall_time_seconds: f64,
    pub boundary_faces: usize,
    pub final_alpha: Vec<f64>,
    pub final_region_areas: Vec<f64>,
    pub reference_mismatch_fraction: f64,
    pub snapshots: Vec<String>,
}

fn csv_header(materials: usize) -> String {
    let mut cols: Vec<String> =
        ["iteration", "cost", "kappa", "accepted", "substeps", "changed_faces"].iter().map(|s| s.to_string()).collect();
    cols.extend((1..=materials).map(|i| format!("area_{i}")));
    cols.extend((1..=materials).map(|i| format!("alpha_{i}")));
    cols.join(",")
}

/// One history row with floats at 17 significant digits.
pub fn csv_row(h: &HistoryEntry) -> String {
    let mut cols = vec![
        h.iteration.to_string(),
        format!("{:.16e}", h.cost),
        format!("{:.16e}", h.kappa),
        u8::from(h.accepted).to_string(),
        h.substeps.to_string(),
        h.changed_faces.to_string(),
    ];
    cols.extend(h.region_areas.iter().map(|a| format!("{a:.16e}")));
    cols.extend(h.alpha.iter().map(|a| format!("{a:.16e}")));
    cols.join(",")
}

fn output_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Output { path: path.to_path_buf(), source }
}

struct RunWriter {
    dir: PathBuf,
    history: BufWriter<File>,
    history_path: PathBuf,
    rows_written: usize,
    snapshot_every: usize,
    last_snapshot: Option<usize>,
    snapshots: Vec<String>,
}

impl RunWriter {
    fn new(dir: &Path, materials: usize, snapshot_every: usize) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(output_err(dir))?;
        let history_path = dir.join("history.csv");
        let file = File::create(&history_path).map_err(output_err(&history_path))?;
        let mut history = BufWriter::new(file);
        writeln!(history, "{}", csv_header(materials)).map_err(output_err(&history_path))?;
        Ok(RunWriter {
            dir: dir.to_path_buf(),
            history,
            history_path,
            rows_written: 0,
            snapshot_every,
            last_snapshot: None,
            snapshots: Vec::new(),
        })
    }

    fn observe(&mut self, problem: &ControlProblem, view: &IterationView) -> Result<()> {
        for h in &view.history[self.rows_written..] {
            writeln!(self.history, "{}", csv_row(h)).map_err(output_err(&self.history_path))?;
        }
        self.rows_written = view.history.len();
        self.history.flush().map_err(output_err(&self.history_path))?;

        let due = self.last_snapshot.is_none()
            || (self.snapshot_every > 0
                && view.accepted_steps.is_multiple_of(self.snapshot_every)
                && self.last_snapshot != Some(view.accepted_steps));
        let name = if view.is_final {
            "snapshot_final.vtk".to_string()
        } else if due {
            format!("snapshot_{:05}.vtk", view.accepted_steps)
        } else {
            return Ok(());
        };
        let snap = BoundarySnapshot {
            partition: view.partition,
            psi: view.psi,
            g: &view.fields.g,
            flux: view.flux,
            alpha: view.alpha,
        };
        write_boundary_snapshot(&problem.mesh, &snap, &self.dir.join(&name))?;
        self.last_snapshot = Some(view.accepted_steps);
        self.snapshots.push(name);
        Ok(())
    }
}

/// Runs the optimization described by `config`, writing `history.csv`,
/// VTK snapshots and `summary.json` into `output_dir`.
pub fn run(config: ExperimentConfig, output_dir: &Path) -> Result<RunSummary> {
    let start = Instant::now();
    let experiment = Experiment::new(config)?;
    let Experiment { config, problem, geometry, reference } = &experiment;
    let opt = config.optimizer_config()?;
    let mut writer = RunWriter::new(output_dir, config.problem.materials, config.output.snapshot_every)?;
    std::fs::write(output_dir.join("config.toml"), config.to_toml_string())
        .map_err(output_err(&output_dir.join("config.toml")))?;

    let psi0 = init_levelset(geometry, problem.mesh.face_count())?;
    let mut io_error = None;
    let mut observer = |view: &IterationView| {
        if io_error.is_none() {
            if let Err(e) = writer.observe(problem, view) {
                io_error = Some(e);
            }
        }
    };
    let outcome = optimize(problem, geometry, psi0, config.control_values()?, &opt, &mut observer);
    let state = match outcome {
        Ok(state) => state,
        Err(e) => {
            let _ = writer.history.flush();
            return Err(e.into());
        }
    };
    if let Some(e) = io_error {
        return Err(e);
    }

    let summary = RunSummary {
        initial_cost: state.initial_cost,
        final_cost: state.cost,
        cost_ratio: if state.initial_cost > 0.0 { state.cost / state.initial_cost } else { 0.0 },
        iterations: state.iteration,
        accepted_steps: state.accepted_steps,
        termination: state.termination.as_str().to_string(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        boundary_faces: problem.mesh.face_count(),
        final_alpha: state.control.alpha.clone(),
        final_region_areas: state.partition.region_areas(&problem.mesh),
        reference_mismatch_fraction: state.partition.mismatch_area(reference, &problem.mesh)
            / problem.mesh.boundary_area(),
        snapshots: writer.snapshots.clone(),
    };
    let summary_path = output_dir.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    std::fs::write(&summary_path, text + "\n").map_err(output_err(&summary_path))?;
    Ok(summary)
}

/// Size and geometry report of the configured mesh and reference.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshInfo {
    pub vertices: usize,
    pub tets: usize,
    pub boundary_faces: usize,
    pub boundary_vertices: usize,
    pub volume: f64,
    pub boundary_volume: f64,
    pub boundary_area: f64,
    pub ellipsoid_volume: Option<f64>,
    pub reference_areas: Vec<f64>,
}

impl fmt::Display for MeshInfo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "vertices          {}", self.vertices)?;
        writeln!(f, "tetrahedra        {}", self.tets)?;
        writeln!(f, "boundary faces    {}", self.boundary_faces)?;
        writeln!(f, "boundary vertices {}", self.boundary_vertices)?;
        writeln!(f, "volume            {:.12}", self.volume)?;
        writeln!(f, "volume (surface)  {:.12}", self.boundary_volume)?;
        if let Some(v) = self.ellipsoid_volume {
            writeln!(f, "volume (exact)    {v:.12}")?;
        }
        writeln!(f, "surface area      {:.12}", self.boundary_area)?;
        for (i, a) in self.reference_areas.iter().enumerate() {
            writeln!(f, "reference area S{} {:.12}", i + 1, a)?;
        }
        Ok(())
    }
}

pub fn mesh_info(config: &ExperimentConfig) -> Result<MeshInfo> {
    config.validate()?;
    let mesh = build_mesh(config)?;
    let labeler = config.reference_labeler()?;
    let labels = mesh.faces().iter().map(|g| labeler.label(g.centroid)).collect();
    let reference = BoundaryPartition::new(labels, config.problem.materials)?;
    let ellipsoid_volume = config.mesh.file.is_none().then(|| {
        let [a, b, c] = config.mesh.axes;
        4.0 / 3.0 * std::f64::consts::PI * a * b * c
    });
    Ok(MeshInfo {
        vertices: mesh.vertex_count(),
        tets: mesh.tet_count(),
        boundary_faces: mesh.face_count(),
        boundary_vertices: mesh.boundary_vertex_flags().iter().filter(|&&b| b).count(),
        volume: mesh.volume(),
        boundary_volume: mesh.boundary_volume(),
        boundary_area: mesh.boundary_area(),
        ellipsoid_volume,
        reference_areas: reference.region_areas(&mesh),
    })
}

/// Closed-form against finite-difference topological derivatives on the
/// initial all-`S_M` design.
pub fn fd_check(config: &ExperimentConfig, faces: usize, seed: u64) -> Result<FdComparison> {
    let experiment = Experiment::new(config.clone())?;
    let m = config.problem.materials;
    let partition = BoundaryPartition::uniform(experiment.problem.mesh.face_count(), m, m)?;
    Ok(compare_with_fd(&experiment.problem, &partition, &config.problem.alpha, faces, seed)?)
}
