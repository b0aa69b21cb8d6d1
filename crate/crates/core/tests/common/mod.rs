#![allow(dead_code)]

use dirichlet_topo::control::ControlProblem;
use dirichlet_topo::experiment::{build_reference, ExperimentConfig};
use dirichlet_topo::{generate_ellipsoid_mesh, BoundaryPartition, SolverOptions, Source};

pub const ALPHA: [f64; 3] = [0.1, 10.0, 3.0];

pub fn config(n: usize, preset: &str) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.mesh.subdivisions = n;
    c.reference.preset = Some(preset.to_string());
    c
}

/// Ellipsoid (1, 0.5, 1) problem whose target is the state of `preset`.
pub fn reference_problem(n: usize, preset: &str) -> (ControlProblem, BoundaryPartition) {
    let c = config(n, preset);
    let mesh = generate_ellipsoid_mesh(1.0, 0.5, 1.0, n).unwrap();
    let (reference, u_ref) = build_reference(&c, &mesh).unwrap();
    let problem = ControlProblem::new(mesh, u_ref, &Source::Constant(1.0), SolverOptions::default()).unwrap();
    (problem, reference)
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
