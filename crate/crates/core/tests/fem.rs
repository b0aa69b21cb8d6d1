use std::f64::consts::PI;

use dirichlet_topo::fem::{assemble_mass, assemble_stiffness, l2_inner, solve_dirichlet};
use dirichlet_topo::{generate_ellipsoid_mesh, Mesh, NodalField, SolverOptions, Source};

fn solve(mesh: &Mesh, g: impl Fn([f64; 3]) -> f64, f: f64) -> NodalField {
    let k = assemble_stiffness(mesh);
    let trace = NodalField::boundary_trace(mesh, g);
    solve_dirichlet(mesh, &k, &trace, &Source::Constant(f), None, SolverOptions::default()).unwrap()
}

fn l2_error(mesh: &Mesh, u: &NodalField, exact: impl Fn([f64; 3]) -> f64) -> f64 {
    let m = assemble_mass(mesh);
    let e: Vec<f64> = u.iter().zip(NodalField::interpolate(mesh, exact).iter()).map(|(a, b)| a - b).collect();
    l2_inner(&m, &e, &e).sqrt()
}

#[test]
fn linear_data_is_reproduced_exactly() {
    let g = |p: [f64; 3]| 2.0 * p[0] - 3.0 * p[1] + p[2];
    for n in [3, 8] {
        let mesh = generate_ellipsoid_mesh(1.0, 0.5, 1.0, n).unwrap();
        let u = solve(&mesh, g, 0.0);
        let err = u.max_abs_diff(&NodalField::interpolate(&mesh, g));
        assert!(err <= 1e-8, "n={n}: {err}");
    }
}

#[test]
fn quadratic_solution_converges_at_second_order() {
    let exact = |p: [f64; 3]| p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
    let errors: Vec<f64> = [6, 12]
        .iter()
        .map(|&n| {
            let mesh = generate_ellipsoid_mesh(1.0, 0.5, 1.0, n).unwrap();
            let u = solve(&mesh, exact, -6.0);
            l2_error(&mesh, &u, exact)
        })
        .collect();
    assert!(errors[0] / errors[1] >= 3.0, "{errors:?}");
}

#[test]
fn harmonic_solution_obeys_the_maximum_principle() {
    let mesh = generate_ellipsoid_mesh(1.0, 0.5, 1.0, 7).unwrap();
    let g = |p: [f64; 3]| (3.0 * p[0]).sin() + p[2] * p[1];
    let u = solve(&mesh, g, 0.0);
    let trace: Vec<f64> =
        (0..mesh.vertex_count()).filter(|&v| mesh.is_boundary_vertex(v)).map(|v| g(mesh.vertices()[v])).collect();
    let lo = trace.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = trace.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!(u.iter().all(|&x| x >= lo - 1e-8 && x <= hi + 1e-8));
}

#[test]
fn solution_is_linear_in_data_and_source() {
    let mesh = generate_ellipsoid_mesh(1.0, 0.5, 1.0, 5).unwrap();
    let g1 = |p: [f64; 3]| p[0] * p[0] - p[2];
    let g2 = |p: [f64; 3]| (p[1] * 2.0).exp();
    let a = solve(&mesh, g1, 1.5);
    let b = solve(&mesh, g2, -0.5);
    let c = solve(&mesh, |p| g1(p) + g2(p), 1.0);
    let sum = NodalField(a.iter().zip(b.iter()).map(|(x, y)| x + y).collect());
    assert!(c.max_abs_diff(&sum) < 1e-8);
}

#[test]
fn mass_matrix_integrates_quadratics() {
    let exact = 4.0 * PI / 15.0;
    let mut last = f64::INFINITY;
    for n in [4, 8, 16] {
        let mesh = generate_ellipsoid_mesh(1.0, 1.0, 1.0, n).unwrap();
        let m = assemble_mass(&mesh);
        let x = NodalField::interpolate(&mesh, |p| p[0]);
        let err = (l2_inner(&m, &x, &x) - exact).abs() / exact;
        assert!(err < last);
        last = err;
    }
    assert!(last < 0.02, "{last}");
}

#[test]
fn stiffness_is_symmetric_with_constant_kernel() {
    let mesh = generate_ellipsoid_mesh(1.0, 0.5, 1.0, 5).unwrap();
    let k = assemble_stiffness(&mesh);
    assert!(k.symmetry_defect() < 1e-12);
    let ones = vec![1.0; mesh.vertex_count()];
    assert!(k.mul_vec(&ones).iter().all(|r| r.abs() < 1e-12));
    let m = assemble_mass(&mesh);
    let total: f64 = m.mul_vec(&ones).iter().sum();
    assert!((total - mesh.volume()).abs() < 1e-12);
}
