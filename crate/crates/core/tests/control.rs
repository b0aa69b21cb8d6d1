mod common;

use dirichlet_topo::control::{
    fixed_point_alpha, optimal_alpha, region_flux_integrals, ControlValues, FixedPointOptions, FluxRecovery,
};
use dirichlet_topo::fem::{assemble_mass, l2_inner, solve_dirichlet};
use dirichlet_topo::{BoundaryPartition, ControlProblem, NodalField, SolverOptions, Source};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{reference_problem, ALPHA};

fn cost_at(problem: &ControlProblem, partition: &BoundaryPartition, alpha: &[f64], lambda: f64) -> f64 {
    problem.evaluate(partition, alpha, lambda).unwrap().cost
}

#[test]
fn adjoint_is_nonpositive_when_the_state_overshoots() {
    let (problem, reference) = reference_problem(8, "two_material");
    // raising every control value raises the state everywhere
    let u = problem.state(&reference, &[1.1, 11.0, 4.0]).unwrap();
    assert!(u.iter().zip(problem.u_ref.iter()).all(|(a, b)| a >= b));
    let p = problem.adjoint(&u).unwrap();
    assert!(p.iter().all(|&x| x <= 1e-12));
    assert!(p.iter().any(|&x| x < -1e-6));
    for recovery in [FluxRecovery::Gradient, FluxRecovery::Consistent] {
        let flux = problem.recovered_flux(recovery, &u, &p);
        let total: f64 = region_flux_integrals(&problem.mesh, &reference, &flux).iter().sum();
        assert!(total > 0.0, "{recovery:?}");
    }
}

/// Relative gap between `u_g^T (-2 M (u - u_ref))` and `-sum_F A_F g_F flux_F`.
fn pairing_gap(n: usize, recovery: FluxRecovery) -> f64 {
    let (problem, _) = reference_problem(n, "two_material");
    let mesh = &problem.mesh;
    let all3 = BoundaryPartition::uniform(mesh.face_count(), 3, 3).unwrap();
    let u = problem.state(&all3, &ALPHA).unwrap();
    let p = problem.adjoint(&u).unwrap();
    let e: Vec<f64> = u.iter().zip(problem.u_ref.iter()).map(|(a, b)| a - b).collect();
    let g = |x: [f64; 3]| 1.0 + 0.5 * x[0] - x[1] * x[1] + 0.3 * x[2];
    let lift = solve_dirichlet(
        mesh,
        &problem.stiffness,
        &NodalField::boundary_trace(mesh, g),
        &Source::Constant(0.0),
        None,
        SolverOptions::default(),
    )
    .unwrap();
    let direct = -2.0 * l2_inner(&assemble_mass(mesh), &lift, &e);
    let flux = problem.recovered_flux(recovery, &u, &p);
    let pairing: f64 = (0..mesh.face_count()).map(|f| mesh.face(f).area * g(mesh.face(f).centroid) * flux[f]).sum();
    (direct + pairing).abs() / direct.abs()
}

#[test]
fn adjoint_flux_pairs_with_harmonic_lifts() {
    let rel = pairing_gap(10, FluxRecovery::Consistent);
    assert!(rel <= 0.02, "consistent flux: {rel}");
    let rel = pairing_gap(10, FluxRecovery::Gradient);
    assert!(rel <= 0.1, "gradient flux: {rel}");
}

#[test]
fn gradient_flux_pairing_improves_under_refinement() {
    let rel: Vec<f64> = [6, 10, 14].iter().map(|&n| pairing_gap(n, FluxRecovery::Gradient)).collect();
    assert!(rel[1] < rel[0] && rel[2] < rel[1], "{rel:?}");
}

#[test]
fn consistent_flux_is_the_exact_gradient_in_alpha() {
    let (problem, reference) = reference_problem(6, "three_material");
    let alpha = [1.0, 5.0, 2.0];
    let u = problem.state(&reference, &alpha).unwrap();
    let p = problem.adjoint(&u).unwrap();
    let flux = problem.recovered_flux(FluxRecovery::Consistent, &u, &p);
    let predicted = region_flux_integrals(&problem.mesh, &reference, &flux);
    for i in 0..3 {
        let h = 1e-4;
        let mut plus = alpha;
        let mut minus = alpha;
        plus[i] += h;
        minus[i] -= h;
        // J is quadratic in alpha, so the central quotient is exact up to roundoff
        let fd = (cost_at(&problem, &reference, &plus, 0.0) - cost_at(&problem, &reference, &minus, 0.0)) / (2.0 * h);
        assert!((predicted[i] - fd).abs() <= 1e-6 * fd.abs().max(1e-3), "region {}: {} vs {fd}", i + 1, predicted[i]);
    }
}

#[test]
fn fixed_point_is_stationary_and_stable() {
    let (problem, reference) = reference_problem(6, "three_material");
    // the damped iteration contracts only when lambda dominates the data Hessian
    let lambda = 1.0;
    let start = ControlValues::new(vec![1.0, 1.0, 1.0], vec![-20.0; 3], vec![20.0; 3]).unwrap();
    let out = fixed_point_alpha(&problem, &reference, &start, lambda, FixedPointOptions::default()).unwrap();
    assert!(out.converged, "last change {}", out.last_change);
    assert!(out.control.is_feasible());
    assert!(out.control.alpha.iter().all(|a| a.abs() < 19.0), "bounds inactive");

    let again = fixed_point_alpha(&problem, &reference, &out.control, lambda, FixedPointOptions::default()).unwrap();
    let moved = again.control.alpha.iter().zip(&out.control.alpha).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(moved <= 1e-8, "{moved}");

    let alpha = &out.control.alpha;
    let j0 = cost_at(&problem, &reference, alpha, lambda);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let d: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
        for t in [1e-2, 1e-3] {
            let moved: Vec<f64> = alpha.iter().zip(&d).map(|(a, x)| a + t * x / norm).collect();
            let j = cost_at(&problem, &reference, &moved, lambda);
            // J is quadratic in alpha, so a stationary point leaves only an O(t^2) rise
            assert!(j >= j0 - 1e-9 * t, "t={t}: {j} < {j0}");
        }
    }
}

#[test]
fn clamping_and_large_lambda_limit() {
    let (problem, reference) = reference_problem(4, "three_material");
    let u = problem.state(&reference, &ALPHA).unwrap();
    let p = problem.adjoint(&u).unwrap();
    let flux = problem.flux(&p);
    let bounds = ControlValues::new(vec![0.0; 3], vec![0.5, -1.0, -3.0], vec![2.0, 1.0, -2.0]).unwrap();
    let out = optimal_alpha(&problem.mesh, &reference, &flux, 1e14, &bounds).unwrap();
    assert_eq!(out.control.alpha[0], 0.5);
    assert!(out.control.alpha[1].abs() < 1e-9);
    assert_eq!(out.control.alpha[2], -2.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn optimal_alpha_stays_in_the_box(
        seed in 0u64..1000,
        scale in 1e-3f64..1e3,
        lambda in 1e-6f64..1e3,
        lo in proptest::collection::vec(-5.0f64..5.0, 3),
        width in proptest::collection::vec(0.0f64..5.0, 3),
    ) {
        let mesh = dirichlet_topo::generate_ellipsoid_mesh(1.0, 0.5, 1.0, 2).unwrap();
        let nf = mesh.face_count();
        let flux: Vec<f64> = (0..nf).map(|f| scale * (((f as u64 * 2654435761 + seed) % 1000) as f64 / 500.0 - 1.0)).collect();
        let labels: Vec<usize> = (0..nf).map(|f| 1 + (f + seed as usize) % 3).collect();
        let partition = BoundaryPartition::new(labels, 3).unwrap();
        let hi: Vec<f64> = lo.iter().zip(&width).map(|(a, w)| a + w).collect();
        let bounds = ControlValues::new(vec![0.0; 3], lo.clone(), hi.clone()).unwrap();
        let out = optimal_alpha(&mesh, &partition, &flux, lambda, &bounds).unwrap();
        for i in 0..3 {
            prop_assert!(out.control.alpha[i] >= lo[i] && out.control.alpha[i] <= hi[i]);
        }
    }
}
