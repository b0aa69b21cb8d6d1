mod common;

use dirichlet_topo::topo::{
    apply_sector_matrix, build_topo_fields, compare_with_fd, sample_faces, topological_derivative_fixed_alpha,
};
use dirichlet_topo::{BoundaryPartition, SectorGeometry};
use proptest::prelude::*;

use common::{reference_problem, ALPHA};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn normals_are_antisymmetric_unit_vectors() {
    for m in [2, 3] {
        let geom = SectorGeometry::new(m).unwrap();
        for i in 1..=m {
            for j in (1..=m).filter(|&j| j != i) {
                let (a, b) = (geom.normal(i, j), geom.normal(j, i));
                assert!(a.iter().zip(b).all(|(x, y)| x == &-y));
                assert!((dot(a, a) - 1.0).abs() < 1e-15);
            }
        }
    }
}

#[test]
fn sector_matrices_invert() {
    let geom = SectorGeometry::new(3).unwrap();
    assert_eq!(geom.matrix(3), &[1.0, 0.0, 0.0, 1.0]);
    for l in 1..=3 {
        for e in [[1.0, 0.0], [0.0, 1.0]] {
            let back = apply_sector_matrix(&geom, l, &{
                let inv = geom.inverse(l);
                [inv[0] * e[0] + inv[1] * e[1], inv[2] * e[0] + inv[3] * e[1]]
            });
            assert!((back[0] - e[0]).abs() < 1e-14 && (back[1] - e[1]).abs() < 1e-14);
        }
    }
}

#[test]
fn unsupported_material_counts_are_rejected() {
    assert!(SectorGeometry::new(1).is_err());
    assert!(SectorGeometry::new(4).is_err());
}

#[test]
fn derivative_is_antisymmetric_in_the_transition() {
    for flux in [-2.5, 0.0, 1e-3, 7.0] {
        for i in 1..=3 {
            assert_eq!(topological_derivative_fixed_alpha(i, i, &ALPHA, flux), 0.0);
            for j in 1..=3 {
                let a = topological_derivative_fixed_alpha(i, j, &ALPHA, flux);
                let b = topological_derivative_fixed_alpha(j, i, &ALPHA, flux);
                assert_eq!(a, -b);
            }
        }
    }
}

#[test]
fn seeded_faces_are_distinct_and_reproducible() {
    let (problem, _) = reference_problem(6, "two_material");
    let a = sample_faces(&problem.mesh, 20, 11);
    let b = sample_faces(&problem.mesh, 20, 11);
    assert_eq!(a, b);
    let mut sorted = a.clone();
    sorted.sort_unstable();
    sorted.dedup();
    assert_eq!(sorted.len(), 20);
    assert_ne!(a, sample_faces(&problem.mesh, 20, 12));
}

#[test]
fn closed_form_matches_finite_differences_on_a_coarse_mesh() {
    let (problem, _) = reference_problem(8, "two_material");
    let all3 = BoundaryPartition::uniform(problem.mesh.face_count(), 3, 3).unwrap();
    let cmp = compare_with_fd(&problem, &all3, &ALPHA, 12, 5).unwrap();
    assert_eq!(cmp.samples.len(), 12);
    assert!(cmp.sign_agreement >= 0.9, "{}", cmp.sign_agreement);
    assert!(cmp.median_relative_error <= 0.5, "{}", cmp.median_relative_error);
}

fn vec2() -> impl Strategy<Value = [f64; 2]> {
    (-1e3f64..1e3, -1e3f64..1e3).prop_map(|(a, b)| [a, b])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn generic_vectors_lie_in_exactly_one_open_sector(psi in vec2()) {
        let geom = SectorGeometry::new(3).unwrap();
        let generic = (1..=3).all(|i| (i + 1..=3).all(|j| dot(&psi, geom.normal(i, j)).abs() > 1e-9));
        prop_assume!(generic);
        let strict = geom.strict_sectors(&psi);
        prop_assert_eq!(strict.len(), 1);
        prop_assert_eq!(geom.sector_of(&psi), strict[0]);
    }

    #[test]
    fn sectors_are_cones(psi in vec2(), scale in 1e-3f64..1e3) {
        let geom = SectorGeometry::new(3).unwrap();
        let scaled = [psi[0] * scale, psi[1] * scale];
        prop_assert_eq!(geom.sector_of(&psi), geom.sector_of(&scaled));
    }

    #[test]
    fn steering_field_reproduces_the_derivatives(
        label in 1usize..=3,
        flux in -50.0f64..50.0,
        alpha in proptest::collection::vec(-10.0f64..10.0, 3),
    ) {
        let geom = SectorGeometry::new(3).unwrap();
        let partition = BoundaryPartition::new(vec![label], 3).unwrap();
        let fields = build_topo_fields(&geom, &partition, &alpha, &[flux]);
        let g = fields.g.get(0);
        let others: Vec<usize> = (1..=3).filter(|&k| k != label).collect();
        for (slot, &j) in others.iter().enumerate() {
            let d = topological_derivative_fixed_alpha(label, j, &alpha, flux);
            prop_assert!((fields.t.get(0)[slot] - d).abs() <= 1e-12 * d.abs().max(1.0));
            prop_assert!((dot(g, geom.normal(j, label)) - d).abs() <= 1e-9 * d.abs().max(1.0));
        }
        // G points into the current sector exactly when no single transition decreases J
        let stationary = others.iter().all(|&j| topological_derivative_fixed_alpha(label, j, &alpha, flux) > 1e-9);
        if stationary {
            prop_assert_eq!(geom.strict_sectors(g), vec![label]);
        }
    }

    #[test]
    fn two_material_sectors_are_half_lines(x in -1e3f64..1e3) {
        prop_assume!(x.abs() > 1e-9);
        let geom = SectorGeometry::new(2).unwrap();
        prop_assert_eq!(geom.sector_of(&[x]), if x > 0.0 { 2 } else { 1 });
        prop_assert_eq!(geom.strict_sectors(&[x]).len(), 1);
    }
}
