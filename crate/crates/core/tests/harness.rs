use perfhom::cell::{homogenize, Regime};
use perfhom::geometry::{build_cell_mesh, build_domain_mesh, CellGeometry, GridMesh, Triangulation};
use perfhom::harness::{
    corrector_energy, emit_report, factorization_residual, run_sweep, ConvergenceReport, Format, SweepPlan, CSV_HEADER,
};
use perfhom::limits::{corrector_field, limit_positive};
use perfhom::materials::{preset_coefficients, preset_density, CoefficientPreset, DensityCase};

fn small_plan(regime: Regime, density: DensityCase) -> SweepPlan {
    let mut plan = SweepPlan::new(regime, density);
    plan.n_values = vec![1, 2, 4];
    plan.limit_grid = 32;
    plan.count = 1;
    plan
}

#[test]
fn corrector_energy_of_the_limit_itself() {
    for geom in [CellGeometry::no_hole(8), CellGeometry::square(8)] {
        let cell = build_cell_mesh(&geom).unwrap();
        let coeff = preset_coefficients(CoefficientPreset::Identity, &cell).unwrap();
        let rho = preset_density(DensityCase::PositiveAvg, &cell).unwrap();
        let model = homogenize(&cell, &coeff, &rho).unwrap();
        let limit = limit_positive(&model.q, model.m, 1, 16).unwrap();
        let corr = corrector_field(&limit, 0, &model, &cell, None).unwrap();
        let filled = GridMesh::unit_square(16);
        let plain = corrector_energy(&filled, &corr.u0, 0.5, &corr, false).unwrap();
        let full = corrector_energy(&filled, &corr.u0, 0.5, &corr, true).unwrap();
        assert!(plain < 1e-12, "{plain}");
        if geom.hole_area().unwrap() == 0.0 {
            assert!(full < 1e-12, "{full}");
        } else {
            assert!(full > 1e-3, "{full}");
        }
    }
}

#[test]
fn corrector_energy_rejects_misaligned_grids() {
    let cell = build_cell_mesh(&CellGeometry::square(8)).unwrap();
    let coeff = preset_coefficients(CoefficientPreset::Identity, &cell).unwrap();
    let rho = preset_density(DensityCase::PositiveAvg, &cell).unwrap();
    let model = homogenize(&cell, &coeff, &rho).unwrap();
    let limit = limit_positive(&model.q, model.m, 1, 16).unwrap();
    let corr = corrector_field(&limit, 0, &model, &cell, None).unwrap();
    let filled = GridMesh::unit_square(12);
    let u = vec![0.0; filled.num_vertices()];
    assert!(corrector_energy(&filled, &u, 0.5, &corr, true).is_err());
}

#[test]
fn exact_factorization_has_zero_residual() {
    let geom = CellGeometry::square(8);
    let cell = build_cell_mesh(&geom).unwrap();
    let mesh = build_domain_mesh(2, 8, &geom).unwrap();
    let theta: Vec<f64> = cell.vertices().iter().map(|p| 1.5 + (p[0] * 6.0).sin() * 0.3).collect();
    let v: Vec<f64> = mesh.vertices().iter().map(|p| p[0] * (1.0 - p[0]) * p[1]).collect();
    let map = mesh.cell_vertex_map(&cell).unwrap();
    let u: Vec<f64> = map.iter().zip(&v).map(|(&c, x)| theta[c] * x).collect();
    assert!(factorization_residual(&mesh, &cell, &theta, &u, &v).unwrap() < 1e-14);
    let neg: Vec<f64> = u.iter().map(|x| -x).collect();
    assert!(factorization_residual(&mesh, &cell, &theta, &neg, &v).unwrap() < 1e-14);
    let other: Vec<f64> = mesh.vertices().iter().map(|p| p[1] * (1.0 - p[1])).collect();
    assert!(factorization_residual(&mesh, &cell, &theta, &other, &v).unwrap() > 0.1);
}

#[test]
fn small_sweep_is_deterministic_and_round_trips() {
    let plan = small_plan(Regime::MZero, DensityCase::ZeroAvg);
    let a = run_sweep(&plan).unwrap();
    let b = run_sweep(&plan).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    let back = ConvergenceReport::from_json(&a.to_json().unwrap()).unwrap();
    assert_eq!(back, a);

    assert_eq!(a.rows.len(), 3 * 2);
    let csv = a.to_csv();
    assert_eq!(csv.lines().next(), Some(CSV_HEADER));
    assert_eq!(csv.lines().count(), 1 + a.rows.len());
    for side in ["+", "-"] {
        let rows = a.series(side, 1);
        assert_eq!(rows.iter().map(|r| r.n).collect::<Vec<_>>(), [1, 2, 4]);
        assert!(rows.windows(2).all(|w| w[1].abs_err < w[0].abs_err), "{side}");
        assert!(rows.iter().all(|r| r.corrector_e.is_some() && r.pairing.is_some()));
    }
    for run in &a.runs {
        assert!(run.normalization_defect < 1e-9);
    }
}

#[test]
fn report_files_follow_requested_formats() {
    let mut plan = small_plan(Regime::MPos, DensityCase::PositiveAvg);
    plan.n_values = vec![1, 2];
    plan.diagnostics.pairing = false;
    let report = run_sweep(&plan).unwrap();
    assert!(report.rows.iter().all(|r| r.pairing.is_none() && r.corrector_e.is_some()));

    let dir = tempfile::tempdir().unwrap();
    let written = emit_report(&report, dir.path(), &[Format::Csv, Format::Svg]).unwrap();
    let names: Vec<String> =
        written.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(
        names,
        [
            "M_pos_convergence.csv",
            "M_pos_error_plus.svg",
            "M_pos_corrector_plus.svg",
            "M_pos_error_minus.svg",
            "M_pos_corrector_minus.svg"
        ]
    );
    assert!(dir.path().join("M_pos_timings.txt").exists());
    assert!(!dir.path().join("M_pos_report.json").exists());
}

#[test]
fn invalid_plans_are_rejected_before_solving() {
    let mut plan = small_plan(Regime::MPos, DensityCase::ZeroAvg);
    plan.limit_grid = 30;
    let err = run_sweep(&plan).unwrap_err().to_string();
    assert!(err.contains("does not match") && err.contains("refinement"), "{err}");
}
