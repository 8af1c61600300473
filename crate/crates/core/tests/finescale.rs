use std::f64::consts::PI;

use perfhom::assembly::{assemble_stiffness, assemble_weighted_mass, weighted_product, DofMap};
use perfhom::finescale::{
    harmonic_extension, solve_eps_spectrum, two_scale_pairing, EpsSolution, NormTag, PeriodicField,
};
use perfhom::geometry::{build_cell_mesh, build_domain_mesh, CellGeometry, DomainMesh, Triangulation};
use perfhom::materials::{preset_coefficients, preset_density, CoefficientPreset, DensityCase, DensityField};
use perfhom::pencil::pencil_oracle_eigenvalues;

struct Setup {
    mesh: DomainMesh,
    rho: DensityField,
}

fn solve(n: usize, case: DensityCase, count: usize, tag: NormTag) -> (Setup, EpsSolution) {
    let geom = CellGeometry::square(8);
    let cell = build_cell_mesh(&geom).unwrap();
    let mesh = build_domain_mesh(n, 8, &geom).unwrap();
    let coeff = preset_coefficients(CoefficientPreset::Layered, &cell).unwrap().on_domain(&mesh, &cell).unwrap();
    let rho = preset_density(case, &cell).unwrap().on_domain(&mesh, &cell).unwrap();
    let sol = solve_eps_spectrum(&mesh, &coeff, &rho, count, count, tag).unwrap();
    (Setup { mesh, rho }, sol)
}

#[test]
fn single_cell_matches_jacobi_oracle() {
    let geom = CellGeometry::square(8);
    let cell = build_cell_mesh(&geom).unwrap();
    let mesh = build_domain_mesh(1, 8, &geom).unwrap();
    let coeff = preset_coefficients(CoefficientPreset::Layered, &cell).unwrap().on_domain(&mesh, &cell).unwrap();
    let rho = preset_density(DensityCase::PositiveAvg, &cell).unwrap().on_domain(&mesh, &cell).unwrap();
    let map = DofMap::dirichlet(mesh.num_vertices(), &mesh.dirichlet_boundary);
    let k = assemble_stiffness(&mesh, &coeff, &map).unwrap().matrix.to_dense();
    let b = assemble_weighted_mass(&mesh, &rho, &map).unwrap().matrix.to_dense();
    let oracle = pencil_oracle_eigenvalues(&k, &b).unwrap();
    let pos: Vec<f64> = oracle.iter().copied().filter(|&x| x > 0.0).collect();
    let neg: Vec<f64> = oracle.iter().rev().copied().filter(|&x| x < 0.0).collect();

    let sol = solve_eps_spectrum(&mesh, &coeff, &rho, 3, 3, NormTag::Signed).unwrap();
    for k in 0..3 {
        let (p, q) = (sol.lambda(true, k), sol.lambda(false, k));
        assert!(((p - pos[k]) / pos[k]).abs() < 1e-10, "{p} vs {}", pos[k]);
        assert!(((q - neg[k]) / neg[k]).abs() < 1e-10, "{q} vs {}", neg[k]);
    }
}

#[test]
fn eps_scaled_fields_carry_signed_eps_norm() {
    for n in [1, 2] {
        let (s, sol) = solve(n, DensityCase::ZeroAvg, 2, NormTag::EpsScaled);
        assert!((sol.eps - 1.0 / n as f64).abs() < 1e-15);
        assert!(sol.normalization_defect(&s.mesh, &s.rho) < 1e-9);
        for k in 0..2 {
            let up = sol.field(true, k);
            let um = sol.field(false, k);
            let np = weighted_product(&s.mesh, Some(&s.rho.values), &up, &up);
            let nm = weighted_product(&s.mesh, Some(&s.rho.values), &um, &um);
            assert!((np - sol.eps).abs() < 1e-9 * sol.eps);
            assert!((nm + sol.eps).abs() < 1e-9 * sol.eps);
            assert!(weighted_product(&s.mesh, Some(&s.rho.values), &up, &um).abs() < 1e-9);
            for &v in &s.mesh.dirichlet_boundary {
                assert_eq!(up[v], 0.0);
            }
        }
    }
}

#[test]
fn positive_and_negative_sequences_are_ordered() {
    let (_, sol) = solve(2, DensityCase::PositiveAvg, 3, NormTag::Signed);
    for k in 0..2 {
        assert!(0.0 < sol.lambda(true, k) && sol.lambda(true, k) <= sol.lambda(true, k + 1));
        assert!(0.0 > sol.lambda(false, k) && sol.lambda(false, k) >= sol.lambda(false, k + 1));
    }
}

#[test]
fn extension_reproduces_constant_and_linear_data() {
    let geom = CellGeometry::square(8);
    let mesh = build_domain_mesh(2, 8, &geom).unwrap();
    let filled = mesh.filled();
    let constant = vec![3.5; mesh.num_vertices()];
    let ext = harmonic_extension(&mesh, &constant).unwrap();
    assert!(ext.values.iter().all(|v| (v - 3.5).abs() < 1e-12));
    assert_eq!(ext.gradient_ratio, 1.0);

    let linear = |p: [f64; 2]| 1.0 + 2.0 * p[0] - 0.5 * p[1];
    let u: Vec<f64> = mesh.vertices().iter().map(|&p| linear(p)).collect();
    let ext = harmonic_extension(&mesh, &u).unwrap();
    for (v, &p) in filled.vertices.iter().enumerate() {
        assert!((ext.values[v] - linear(p)).abs() < 1e-12);
    }
    // Squared gradient norms are proportional to area for linear data.
    let want = (1.0 / mesh.total_area()).sqrt();
    assert!((ext.gradient_ratio - want).abs() < 1e-12, "{} vs {want}", ext.gradient_ratio);
}

#[test]
fn extension_gradient_ratio_stays_bounded() {
    let geom = CellGeometry::square(8);
    let mut ratios = Vec::new();
    for n in [1, 2, 4, 8] {
        let mesh = build_domain_mesh(n, 8, &geom).unwrap();
        let u: Vec<f64> = mesh
            .vertices()
            .iter()
            .map(|p| (PI * p[0]).sin() * (2.0 * PI * p[1]).sin() + (6.0 * PI * p[0] * p[1]).cos())
            .collect();
        ratios.push(harmonic_extension(&mesh, &u).unwrap().gradient_ratio);
    }
    for r in &ratios {
        assert!(*r >= 1.0 && *r < 1.5, "{ratios:?}");
    }
}

#[test]
fn pairing_against_cell_density_converges_to_product_of_means() {
    let geom = CellGeometry::square(8);
    let cell = build_cell_mesh(&geom).unwrap();
    let rho = preset_density(DensityCase::PositiveAvg, &cell).unwrap();
    let phi1 = PeriodicField::density_on_solid(&cell, &rho).unwrap();
    assert!((phi1.mean() - rho.average).abs() < 1e-14);
    // ∫ 16x(1−x)y(1−y) = 4/9.
    let limit = 4.0 / 9.0 * rho.average;
    let mut errors = Vec::new();
    for n in [1, 2, 4, 8] {
        let mesh = build_domain_mesh(n, 8, &geom).unwrap();
        let filled = mesh.filled();
        let ones = vec![1.0; filled.num_vertices()];
        let phi0: Vec<f64> =
            filled.vertices.iter().map(|p| 16.0 * p[0] * (1.0 - p[0]) * p[1] * (1.0 - p[1])).collect();
        errors.push((two_scale_pairing(&filled, &ones, &phi0, &phi1, n).unwrap() - limit).abs());
    }
    for w in errors.windows(2) {
        assert!(w[1] < w[0], "{errors:?}");
    }
    assert!(errors[3] < 2e-2 * limit.abs(), "{errors:?}");
}

#[test]
fn mean_zero_oscillation_pairing_vanishes() {
    let geom = CellGeometry::square(8);
    let psi1 = PeriodicField::from_fn(8, |y| (2.0 * PI * y[0]).cos());
    assert!(psi1.mean().abs() < 1e-14);
    let mut values = Vec::new();
    for n in [1, 2, 4, 8] {
        let mesh = build_domain_mesh(n, 8, &geom).unwrap();
        let filled = mesh.filled();
        let u: Vec<f64> = filled.vertices.iter().map(|p| (p[0] - 0.5).abs()).collect();
        let phi0: Vec<f64> = filled.vertices.iter().map(|p| p[1] * (1.0 - p[1])).collect();
        values.push(two_scale_pairing(&filled, &u, &phi0, &psi1, n).unwrap().abs());
    }
    for w in values.windows(2) {
        assert!(w[1] < w[0], "{values:?}");
    }
    assert!(values[3] < 0.05 * values[0], "{values:?}");
}
