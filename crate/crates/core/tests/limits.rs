use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use perfhom::assembly::{assemble_functionals, assemble_stiffness, DofMap};
use perfhom::cell::{homogenize, HomogenizedModel};
use perfhom::geometry::{build_cell_mesh, CellGeometry, CellMesh};
use perfhom::limits::{
    corrector_field, limit_negative, limit_orthonormality_check, limit_pencil, limit_positive, LimitKind,
};
use perfhom::materials::{preset_coefficients, preset_density, CoefficientPreset, DensityCase, IDENTITY};

const TWO_PI2: f64 = 2.0 * PI * PI;

fn model(geom: CellGeometry, preset: CoefficientPreset, case: DensityCase) -> (CellMesh, HomogenizedModel) {
    let mesh = build_cell_mesh(&geom).unwrap();
    let coeff = preset_coefficients(preset, &mesh).unwrap();
    let rho = preset_density(case, &mesh).unwrap();
    let model = homogenize(&mesh, &coeff, &rho).unwrap();
    (mesh, model)
}

#[test]
fn laplacian_eigenvalue_and_scalings() {
    let base = limit_positive(&IDENTITY, 1.0, 1, 64).unwrap();
    assert!((base.eigenvalues[0] - TWO_PI2).abs() < 0.01 * TWO_PI2, "{}", base.eigenvalues[0]);

    let heavy = limit_positive(&IDENTITY, 2.0, 1, 64).unwrap();
    assert!((heavy.eigenvalues[0] * 2.0 - base.eigenvalues[0]).abs() < 1e-10 * TWO_PI2);

    let neg = limit_negative(&IDENTITY, -1.0, 1, 64).unwrap();
    assert!((neg.eigenvalues[0] + base.eigenvalues[0]).abs() < 1e-10 * TWO_PI2);
    assert_eq!(neg.kind, LimitKind::Negative);

    let pencil = limit_pencil(&IDENTITY, 1.0, 1, 64).unwrap();
    let (plus, minus) = pencil.pencil_pair(0);
    assert!((plus - base.eigenvalues[0].sqrt()).abs() < 1e-10);
    assert!((plus - TWO_PI2.sqrt()).abs() < 0.01 * TWO_PI2.sqrt());
    assert_eq!(minus, -plus);
}

#[test]
fn anisotropic_tensor_converges_under_refinement() {
    let q = [[3f64.sqrt(), 0.0], [0.0, 2.0]];
    let m = 15.0 / 32.0;
    let exact = PI * PI * (3f64.sqrt() + 2.0) / m;
    let errors: Vec<f64> = [16, 32, 64]
        .iter()
        .map(|&g| (limit_positive(&q, m, 1, g).unwrap().eigenvalues[0] - exact).abs())
        .collect();
    assert!(errors[1] < errors[0] / 3.0 && errors[2] < errors[1] / 3.0, "{errors:?}");
    assert!(errors[2] < 0.01 * exact);
}

#[test]
fn limit_grids_form_a_cauchy_sequence() {
    let values: Vec<f64> = [32, 64, 128]
        .iter()
        .map(|&g| limit_positive(&IDENTITY, 1.0, 3, g).unwrap().eigenvalues[2])
        .collect();
    let d1 = (values[1] - values[0]).abs();
    let d2 = (values[2] - values[1]).abs();
    assert!(d2 < d1 / 3.0, "{values:?}");
}

#[test]
fn orthonormalization_holds_for_every_kind() {
    for sol in [
        limit_positive(&IDENTITY, 0.5, 4, 32).unwrap(),
        limit_negative(&[[2.0, 0.1], [0.1, 1.0]], -0.25, 4, 32).unwrap(),
        limit_pencil(&IDENTITY, 0.3, 4, 32).unwrap(),
    ] {
        let report = limit_orthonormality_check(&sol);
        assert!(report.max_defect < 1e-10, "{:?}: {}", sol.kind, report.max_defect);
    }
}

#[test]
fn corrector_vanishes_without_hole_and_with_constant_coefficients() {
    let (cell, model) = model(CellGeometry::no_hole(8), CoefficientPreset::Identity, DensityCase::PositiveAvg);
    assert!(model.chi.iter().all(|c| c.iter().all(|v| v.abs() < 1e-12)));
    let limit = limit_positive(&model.q, model.m, 1, 16).unwrap();
    let corr = corrector_field(&limit, 0, &model, &cell, None).unwrap();
    for x in [[0.3, 0.4], [0.71, 0.12], [0.5, 0.5]] {
        assert!(corr.u1(x, [0.2, 0.9]).abs() < 1e-12);
        let g = corr.composed_gradient(x, 0.125);
        let g0 = corr.limit_value(x).1;
        assert!((g[0] - g0[0]).abs() < 1e-12 && (g[1] - g0[1]).abs() < 1e-12);
    }
}

#[test]
fn pencil_corrector_with_zero_eigenvalue_matches_plain_formula() {
    let (cell, model) = model(CellGeometry::square(8), CoefficientPreset::Layered, DensityCase::ZeroAvg);
    let pencil = limit_pencil(&model.q, model.nu2.unwrap(), 1, 16).unwrap();
    let mut plain = pencil.clone();
    plain.kind = LimitKind::Positive;
    let a = corrector_field(&pencil, 0, &model, &cell, Some(0.0)).unwrap();
    let b = corrector_field(&plain, 0, &model, &cell, None).unwrap();
    assert!(a.chi0.is_some() && b.chi0.is_none());
    for (x, y) in [([0.3, 0.4], [0.1, 0.2]), ([0.8, 0.55], [0.7, 0.05])] {
        assert!((a.u1(x, y) - b.u1(x, y)).abs() < 1e-14);
    }
}

#[test]
fn corrector_satisfies_cell_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (case, preset) in [
        (DensityCase::ZeroAvg, CoefficientPreset::Layered),
        (DensityCase::PositiveAvg, CoefficientPreset::Identity),
    ] {
        let (cell, model) = model(CellGeometry::square(8), preset, case);
        let coeff = preset_coefficients(preset, &cell).unwrap();
        let rho = preset_density(case, &cell).unwrap();
        let map = DofMap::periodic(&cell, false);
        let k = assemble_stiffness(&cell, &coeff, &map).unwrap();
        let f = assemble_functionals(&cell, &coeff, &rho, &map).unwrap();

        let limit = if case == DensityCase::ZeroAvg {
            limit_pencil(&model.q, model.nu2.unwrap(), 1, 16).unwrap()
        } else {
            limit_positive(&model.q, model.m, 1, 16).unwrap()
        };
        let lambda0 = (limit.kind == LimitKind::Pencil).then(|| -limit.eigenvalues[0]);
        let corr = corrector_field(&limit, 0, &model, &cell, lambda0).unwrap();
        for _ in 0..5 {
            let x = [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)];
            let v: Vec<f64> = (0..map.num_dofs).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let u1 = map.restrict(&corr.u1_on_cell(x));
            let (u0, g) = corr.limit_value(x);
            let lhs = k.form(&u1, &v);
            let mut rhs = -g[0] * dot(&f.l[0], &v) - g[1] * dot(&f.l[1], &v);
            if let Some(l0) = lambda0 {
                rhs += l0 * u0 * dot(&f.l0, &v);
            }
            let scale = g[0].abs() + g[1].abs() + u0.abs();
            assert!((lhs - rhs).abs() <= 1e-8 * scale, "{case:?}: {lhs} vs {rhs}");
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
