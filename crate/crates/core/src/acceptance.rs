//! The acceptance suite shared by `perfhom check` and the test target.

use std::sync::OnceLock;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assembly::weighted_product;
use crate::cell::{homogenize, homogenized_tensor_raw, solve_cell_correctors, weighted_cell_data, Regime};
use crate::geometry::{build_cell_mesh, CellGeometry};
use crate::harness::{run_sweep, ConvergenceReport, Row, SweepPlan};
use crate::limits::{limit_negative, limit_orthonormality_check, limit_pencil, limit_positive};
use crate::linalg::SparseSym;
use crate::materials::{
    preset_coefficients, preset_density, tensor_eigenvalues, CoefficientPreset, DensityCase, Tensor2, IDENTITY,
};
use crate::pencil::{pencil_oracle_eigenvalues, solve_indefinite_pencil};

pub const DEFAULT_SEED: u64 = 20240611;

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub id: usize,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "{tag} {:>2} {}: {}", self.id, self.name, self.detail)
    }
}

pub const NAMES: [&str; 13] = [
    "tensor exactness",
    "tensor structure",
    "indefinite pencil oracle",
    "two-sequence existence",
    "local eigenfunction facts",
    "positive average, positive side",
    "positive average, negative side",
    "zero average",
    "corrector decay",
    "scaled two-scale pairing",
    "normalization identities",
    "negative-average reduction",
    "determinism",
];

type Check = Result<(bool, String), String>;

fn sweep(regime: Regime) -> Result<&'static ConvergenceReport, String> {
    static POS: OnceLock<Result<ConvergenceReport, String>> = OnceLock::new();
    static ZERO: OnceLock<Result<ConvergenceReport, String>> = OnceLock::new();
    static NEG: OnceLock<Result<ConvergenceReport, String>> = OnceLock::new();
    let (cell, density) = match regime {
        Regime::MPos => (&POS, DensityCase::PositiveAvg),
        Regime::MZero => (&ZERO, DensityCase::ZeroAvg),
        Regime::MNeg => (&NEG, DensityCase::NegativeAvg),
    };
    cell.get_or_init(|| run_sweep(&SweepPlan::new(regime, density)).map_err(|e| e.to_string()))
        .as_ref()
        .map_err(Clone::clone)
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn fmt_seq(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(" > ")
}

fn column(rows: &[&Row], f: impl Fn(&Row) -> Option<f64>) -> Result<Vec<f64>, String> {
    rows.iter()
        .map(|r| f(r).ok_or_else(|| format!("missing value at n = {}", r.n)))
        .collect()
}

fn asymmetry(q: &Tensor2) -> f64 {
    (q[0][1] - q[1][0]).abs()
}

fn c1() -> Check {
    let mesh = build_cell_mesh(&CellGeometry::no_hole(16)).map_err(|e| e.to_string())?;
    let coeff = preset_coefficients(CoefficientPreset::Identity, &mesh).map_err(|e| e.to_string())?;
    let chi = solve_cell_correctors(&mesh, &coeff).map_err(|e| e.to_string())?;
    let q = homogenized_tensor_raw(&mesh, &coeff, &chi).map_err(|e| e.to_string())?;
    let id_err = (0..2)
        .flat_map(|i| (0..2).map(move |j| (i, j)))
        .map(|(i, j)| (q[i][j] - IDENTITY[i][j]).abs())
        .fold(0.0, f64::max);

    let mesh = build_cell_mesh(&CellGeometry::no_hole(64)).map_err(|e| e.to_string())?;
    let coeff = preset_coefficients(CoefficientPreset::Layered, &mesh).map_err(|e| e.to_string())?;
    let chi = solve_cell_correctors(&mesh, &coeff).map_err(|e| e.to_string())?;
    let q = homogenized_tensor_raw(&mesh, &coeff, &chi).map_err(|e| e.to_string())?;
    // Harmonic mean of 2 + cos 2πy across the layers, arithmetic mean along them.
    let want = [3f64.sqrt(), 2.0];
    let rel = (0..2).map(|i| ((q[i][i] - want[i]) / want[i]).abs()).fold(0.0, f64::max);
    let off = q[0][1].abs().max(q[1][0].abs());
    Ok((
        id_err <= 1e-12 && rel <= 1e-6 && off <= 1e-10,
        format!("|q - Id| = {id_err:.1e}; layered rel err {rel:.1e}, off-diagonal {off:.1e}"),
    ))
}

fn c2() -> Check {
    let mut worst_asym: f64 = 0.0;
    let mut min_eig = f64::INFINITY;
    let mut cases = 0;
    let geometries = [
        CellGeometry::square(8),
        CellGeometry::square(16),
        CellGeometry::polygon(16, [0.25, 0.25, 0.75, 0.75]),
    ];
    for geom in &geometries {
        let mesh = build_cell_mesh(geom).map_err(|e| e.to_string())?;
        for preset in [CoefficientPreset::Identity, CoefficientPreset::Layered] {
            let coeff = preset_coefficients(preset, &mesh).map_err(|e| e.to_string())?;
            for case in [DensityCase::PositiveAvg, DensityCase::ZeroAvg, DensityCase::NegativeAvg] {
                let rho = preset_density(case, &mesh).map_err(|e| e.to_string())?;
                let model = homogenize(&mesh, &coeff, &rho).map_err(|e| e.to_string())?;
                let q = homogenized_tensor_raw(&mesh, &coeff, &model.chi).map_err(|e| e.to_string())?;
                worst_asym = worst_asym.max(asymmetry(&q));
                min_eig = min_eig.min(tensor_eigenvalues(&model.q)[0]);
                if let (Some(w), Some(chi_t), Some(qt)) = (&model.theta2_weights, &model.chi_tilde, &model.q_tilde) {
                    let a_t = coeff.weighted(w, "weighted").map_err(|e| e.to_string())?;
                    let q_raw = homogenized_tensor_raw(&mesh, &a_t, chi_t).map_err(|e| e.to_string())?;
                    worst_asym = worst_asym.max(asymmetry(&q_raw));
                    min_eig = min_eig.min(tensor_eigenvalues(qt)[0]);
                }
                cases += 1;
            }
        }
    }
    Ok((
        worst_asym <= 1e-10 && min_eig > 0.0,
        format!("{cases} preset combinations; max asymmetry {worst_asym:.1e}, min eigenvalue {min_eig:.4}"),
    ))
}

/// Random SPD `K` and symmetric indefinite `B`, some of them singular.
pub fn random_pencil(rng: &mut ChaCha8Rng, n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let k = &a * a.transpose() + DMatrix::identity(n, n) * (n as f64 * 0.1);
    let rank = if rng.gen_bool(0.3) { rng.gen_range(2..=n.max(2)) } else { n };
    let mut b = DMatrix::zeros(n, n);
    for r in 0..rank {
        let v = nalgebra::DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        // Alternate signs so both sequences exist.
        let s = if r % 2 == 0 { 1.0 } else { -1.0 };
        b += s * &v * v.transpose();
    }
    (k, b)
}

pub fn pencil_instances(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut sign_failures = 0;
    let mut compared = 0;
    for _ in 0..100 {
        let n = rng.gen_range(2..=30);
        let (k, b) = random_pencil(&mut rng, n);
        let oracle = pencil_oracle_eigenvalues(&k, &b).map_err(|e| e.to_string())?;
        let pos: Vec<f64> = oracle.iter().copied().filter(|&x| x > 0.0).collect();
        let mut neg: Vec<f64> = oracle.iter().copied().filter(|&x| x < 0.0).collect();
        neg.reverse();
        let (ks, bs) = (SparseSym::from_dense(&k), SparseSym::from_dense(&b));
        let spec = solve_indefinite_pencil(&ks, &bs, pos.len(), neg.len()).map_err(|e| e.to_string())?;
        for (got, want) in [(&spec.positive, &pos), (&spec.negative, &neg)] {
            for (p, &w) in got.iter().zip(want.iter()) {
                worst = worst.max(((p.lambda - w) / w).abs());
                compared += 1;
                let form = bs.form(&p.vector, &p.vector);
                if form.signum() != p.lambda.signum() {
                    sign_failures += 1;
                }
            }
        }
    }
    Ok((
        worst <= 1e-10 && sign_failures == 0,
        format!("{compared} eigenvalues over 100 pencils; max rel err {worst:.1e}, sign failures {sign_failures}"),
    ))
}

fn c4() -> Check {
    let mut solves = 0;
    for regime in [Regime::MPos, Regime::MZero, Regime::MNeg] {
        for run in &sweep(regime)?.runs {
            if run.positive.is_empty() || run.negative.is_empty() {
                return Ok((false, format!("{regime} n = {} lacks a sequence", run.n)));
            }
            solves += 1;
        }
    }
    Ok((true, format!("{solves} fine-scale solves, all with both sequences")))
}

fn c5() -> Check {
    let mut details = Vec::new();
    let mut ok = true;
    for m in [8, 16] {
        let mesh = build_cell_mesh(&CellGeometry::square(m)).map_err(|e| e.to_string())?;
        let coeff = preset_coefficients(CoefficientPreset::Identity, &mesh).map_err(|e| e.to_string())?;
        let rho = preset_density(DensityCase::PositiveAvg, &mesh).map_err(|e| e.to_string())?;
        let model = homogenize(&mesh, &coeff, &rho).map_err(|e| e.to_string())?;
        let lambda = model.lambda1neg.ok_or("no local eigenvalue")?;
        let theta = model.theta1neg.as_ref().ok_or("no local eigenfunction")?;
        let min_theta = theta.iter().copied().fold(f64::INFINITY, f64::min);
        let energy = weighted_product(&mesh, Some(&rho.values), theta, theta);

        let data = weighted_cell_data(&mesh, &coeff, &rho, theta).map_err(|e| e.to_string())?;
        let doubled: Vec<f64> = theta.iter().map(|t| 2.0 * t).collect();
        let data2 = weighted_cell_data(&mesh, &coeff, &rho, &doubled).map_err(|e| e.to_string())?;
        let xi = limit_negative(&data.q_tilde, data.m_tilde, 3, 32).map_err(|e| e.to_string())?;
        let xi2 = limit_negative(&data2.q_tilde, data2.m_tilde, 3, 32).map_err(|e| e.to_string())?;
        let drift = xi
            .eigenvalues
            .iter()
            .zip(&xi2.eigenvalues)
            .map(|(a, b)| ((a - b) / a).abs())
            .fold(0.0, f64::max);
        ok &= lambda < 0.0 && min_theta > 0.0 && energy < 0.0 && drift <= 1e-10;
        details.push(format!(
            "m={m}: λ₁⁻ = {lambda:.4}, min θ = {min_theta:.3e}, ∫ρθ² = {energy:.4}, ξ drift {drift:.1e}"
        ));
    }
    Ok((ok, details.join("; ")))
}

fn c6() -> Check {
    let rep = sweep(Regime::MPos)?;
    let rows = rep.series("+", 1);
    let err = column(&rows, |r| Some(r.abs_err))?;
    let rel = rows.last().ok_or("empty sweep")?.rel_err;
    Ok((
        strictly_decreasing(&err) && rel <= 0.1,
        format!("|λ - λ₀| {}; final rel err {rel:.3}", fmt_seq(&err)),
    ))
}

fn c7() -> Check {
    let rep = sweep(Regime::MPos)?;
    let rows = rep.series("-", 1);
    let err = column(&rows, |r| Some(r.abs_err))?;
    let res = column(&rows, |r| r.factor_resid)?;
    Ok((
        strictly_decreasing(&err) && strictly_decreasing(&res),
        format!("shifted error {}; factorization residual {}", fmt_seq(&err), fmt_seq(&res)),
    ))
}

/// Roundoff floor below which a vanishing quantity counts as converged.
const SYMMETRY_FLOOR: f64 = 1e-10;

fn c8() -> Check {
    let rep = sweep(Regime::MZero)?;
    let plus = column(&rep.series("+", 1), |r| Some(r.abs_err))?;
    let minus = column(&rep.series("-", 1), |r| Some(r.abs_err))?;
    let sums: Vec<f64> = rep
        .runs
        .iter()
        .map(|r| r.pencil_symmetry.as_ref().map(|s| s[0]).ok_or("no symmetry data"))
        .collect::<Result<_, _>>()?;
    let scale = rep.series("+", 1).iter().map(|r| r.lambda_transformed.abs()).fold(0.0, f64::max);
    let sums_ok = sums
        .windows(2)
        .all(|w| w[1] < w[0] || w[1] <= SYMMETRY_FLOOR * scale);

    let nu2 = rep.model.nu2.ok_or("no nu^2")?;
    let lim = limit_pencil(&rep.model.q, nu2, 1, 64).map_err(|e| e.to_string())?;
    let mesh = lim.mesh();
    let u = &lim.eigenfunctions[0];
    let measured = weighted_product(&mesh, None, u, u);
    let (lp, lm) = lim.pencil_pair(0);
    // 1/(√μ ν) from either branch: ±1/(λ₀^{1,±} ν²).
    let want_p = 1.0 / (lp * nu2);
    let want_m = -1.0 / (lm * nu2);
    let norm_err = ((measured - want_p) / want_p).abs().max(((measured - want_m) / want_m).abs());
    Ok((
        strictly_decreasing(&plus) && strictly_decreasing(&minus) && sums_ok && norm_err <= 1e-6,
        format!(
            "+ err {}; - err {}; |ελ⁺+ελ⁻| {:?}; normalization rel err {norm_err:.1e}",
            fmt_seq(&plus),
            fmt_seq(&minus),
            sums.iter().map(|x| format!("{x:.1e}")).collect::<Vec<_>>()
        ),
    ))
}

fn c9() -> Check {
    let mut ok = true;
    let mut parts = Vec::new();
    for (regime, side) in [(Regime::MPos, "+"), (Regime::MZero, "+"), (Regime::MZero, "-")] {
        let rows = sweep(regime)?.series(side, 1);
        let e = column(&rows, |r| r.corrector_e)?;
        let plain = column(&rows, |r| r.corrector_e_plain)?;
        let helps = e.last() < plain.last();
        ok &= strictly_decreasing(&e) && helps;
        parts.push(format!(
            "{regime}{side}: E {} (without corrector {:.3e})",
            fmt_seq(&e),
            plain.last().copied().unwrap_or(f64::NAN)
        ));
    }
    Ok((ok, parts.join("; ")))
}

fn c10() -> Check {
    let rep = sweep(Regime::MZero)?;
    let mut ok = true;
    let mut parts = Vec::new();
    for side in ["+", "-"] {
        let err = column(&rep.series(side, 1), |r| r.pairing.as_ref().map(|p| p.error))?;
        ok &= strictly_decreasing(&err);
        parts.push(format!("{side}: {}", fmt_seq(&err)));
    }
    Ok((ok, parts.join("; ")))
}

fn c11() -> Check {
    let mut worst: f64 = 0.0;
    for regime in [Regime::MPos, Regime::MZero, Regime::MNeg] {
        for run in &sweep(regime)?.runs {
            worst = worst.max(run.normalization_defect);
            if let Some(w) = run.weighted_normalization_defect {
                worst = worst.max(w);
            }
        }
    }
    let model = &sweep(Regime::MPos)?.model;
    let pos = limit_positive(&model.q, model.m, 3, 64).map_err(|e| e.to_string())?;
    let zero = &sweep(Regime::MZero)?.model;
    let pencil = limit_pencil(&zero.q, zero.nu2.ok_or("no nu^2")?, 3, 64).map_err(|e| e.to_string())?;
    let gram = limit_orthonormality_check(&pos)
        .max_defect
        .max(limit_orthonormality_check(&pencil).max_defect);
    Ok((
        worst <= 1e-8 && gram <= 1e-6,
        format!("fine-scale normalization defect {worst:.1e}; limit Gram defect {gram:.1e}"),
    ))
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300)
}

fn close_opt(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => close(a, b),
        (None, None) => true,
        _ => false,
    }
}

fn c12() -> Check {
    let pos = sweep(Regime::MPos)?;
    let neg = sweep(Regime::MNeg)?;
    if pos.rows.len() != neg.rows.len() {
        return Ok((false, "row counts differ".into()));
    }
    let mut mismatches = 0;
    let mut worst: f64 = 0.0;
    for r in &neg.rows {
        let other_side = if r.side == "+" { "-" } else { "+" };
        let Some(p) = pos
            .rows
            .iter()
            .find(|p| p.n == r.n && p.k == r.k && p.side == other_side)
        else {
            mismatches += 1;
            continue;
        };
        let pairs = [
            (r.lambda_raw, -p.lambda_raw),
            (r.lambda_transformed, -p.lambda_transformed),
            (r.limit, -p.limit),
            (r.abs_err, p.abs_err),
            (r.rel_err, p.rel_err),
        ];
        for (a, b) in pairs {
            worst = worst.max((a - b).abs() / a.abs().max(b.abs()));
            if !close(a, b) {
                mismatches += 1;
            }
        }
        for (a, b) in [
            (r.corrector_e, p.corrector_e),
            (r.corrector_e_plain, p.corrector_e_plain),
            (r.factor_resid, p.factor_resid),
        ] {
            if let (Some(x), Some(y)) = (a, b) {
                worst = worst.max((x - y).abs() / x.abs().max(y.abs()));
            }
            if !close_opt(a, b) {
                mismatches += 1;
            }
        }
    }
    Ok((
        mismatches == 0,
        format!("{} rows, {mismatches} mismatches, max rel diff {worst:.1e}", neg.rows.len()),
    ))
}

fn c13() -> Check {
    let plan = SweepPlan::new(Regime::MZero, DensityCase::ZeroAvg);
    let a = run_sweep(&plan).map_err(|e| e.to_string())?;
    let b = run_sweep(&plan).map_err(|e| e.to_string())?;
    let csv = a.to_csv() == b.to_csv();
    let json = a.to_json().map_err(|e| e.to_string())? == b.to_json().map_err(|e| e.to_string())?;
    Ok((csv && json, format!("CSV identical: {csv}, JSON identical: {json}")))
}

pub fn run_criterion(id: usize, seed: u64) -> Outcome {
    let result = match id {
        1 => c1(),
        2 => c2(),
        3 => pencil_instances(seed),
        4 => c4(),
        5 => c5(),
        6 => c6(),
        7 => c7(),
        8 => c8(),
        9 => c9(),
        10 => c10(),
        11 => c11(),
        12 => c12(),
        13 => c13(),
        _ => Err(format!("no criterion {id}")),
    };
    let (pass, detail) = result.unwrap_or_else(|e| (false, format!("error: {e}")));
    Outcome {
        id,
        name: NAMES.get(id.wrapping_sub(1)).copied().unwrap_or("unknown"),
        pass,
        detail,
    }
}

pub fn run_all(seed: u64) -> Vec<Outcome> {
    (1..=NAMES.len()).map(|id| run_criterion(id, seed)).collect()
}
