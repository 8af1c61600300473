//! ε-sweeps per regime: fine solves, limit targets, convergence
//! diagnostics and report files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::assembly::{field_gradients, weighted_product};
use crate::cell::{homogenize, HomogenizedModel, Regime};
use crate::error::{Error, Result};
use crate::finescale::{harmonic_extension, scaled_pairing, solve_eps_spectrum, EpsSolution, NormTag, PeriodicField};
use crate::geometry::{
    build_cell_mesh, build_domain_mesh_with_budget, CellGeometry, CellMesh, DomainMesh, GridMesh, Triangulation,
    DEFAULT_VERTEX_BUDGET,
};
use crate::limits::{
    corrector_field, limit_for, limit_orthonormality_check, Corrector, LimitKind, LimitSolution,
};
use crate::materials::{preset_coefficients, preset_density, CoefficientField, CoefficientPreset, DensityCase, DensityField};

pub const CSV_HEADER: &str =
    "regime,n,eps,k,side,lambda_raw,lambda_transformed,limit,abs_err,rel_err,corrector_E,factor_resid";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub corrector_energy: bool,
    pub factorization: bool,
    pub pairing: bool,
}

impl Default for Diagnostics {
    fn default() -> Self {
        Self {
            corrector_energy: true,
            factorization: true,
            pairing: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub regime: Regime,
    /// Cell geometry at the cell resolution `m`.
    pub geometry: CellGeometry,
    pub s: usize,
    /// `ε = 1/n`, strictly increasing `n`.
    pub n_values: Vec<usize>,
    pub coefficients: CoefficientPreset,
    pub density: DensityCase,
    pub limit_grid: usize,
    /// Eigenpairs tracked per side.
    pub count: usize,
    pub diagnostics: Diagnostics,
    /// Maximum number of mesh vertices per fine solve.
    pub budget: usize,
}

impl SweepPlan {
    pub fn new(regime: Regime, density: DensityCase) -> Self {
        Self {
            regime,
            geometry: CellGeometry::square(8),
            s: 8,
            n_values: vec![2, 4, 8],
            coefficients: CoefficientPreset::Identity,
            density,
            limit_grid: 128,
            count: 2,
            diagnostics: Diagnostics::default(),
            budget: DEFAULT_VERTEX_BUDGET,
        }
    }

    /// All violations, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Err(e) = self.geometry.validate() {
            out.push(e.to_string());
        }
        if self.s != self.geometry.resolution {
            out.push(format!(
                "domain subdivision s = {} must equal the cell resolution m = {}",
                self.s, self.geometry.resolution
            ));
        }
        if self.n_values.is_empty() {
            out.push("sweep needs at least one n".into());
        }
        if self.n_values.contains(&0) {
            out.push("n must be positive".into());
        }
        if self.n_values.windows(2).any(|w| w[1] <= w[0]) {
            out.push(format!("n values {:?} must be strictly increasing (ε decreasing)", self.n_values));
        }
        let expected = match self.density {
            DensityCase::PositiveAvg => Regime::MPos,
            DensityCase::ZeroAvg => Regime::MZero,
            DensityCase::NegativeAvg => Regime::MNeg,
        };
        if expected != self.regime {
            out.push(format!(
                "regime {} does not match density case {} (which gives {})",
                self.regime,
                self.density.name(),
                expected
            ));
        }
        if self.count == 0 {
            out.push("eigenpair count must be positive".into());
        }
        if self.limit_grid < 2 {
            out.push("limit grid must be at least 2".into());
        }
        for &n in &self.n_values {
            let size = n * self.s;
            if (size + 1) * (size + 1) > self.budget {
                out.push(format!("n = {n} needs {} vertices, budget is {}", (size + 1) * (size + 1), self.budget));
            }
            if self.diagnostics.corrector_energy && size > 0 && self.limit_grid % size != 0 {
                out.push(format!("limit grid {} is not a refinement of the n = {n} grid", self.limit_grid));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub n: usize,
    pub eps: f64,
    /// 1-based.
    pub k: usize,
    /// `+` or `-`, for the density actually solved with.
    pub side: String,
    pub lambda_raw: f64,
    pub lambda_transformed: f64,
    pub limit: f64,
    pub abs_err: f64,
    pub rel_err: f64,
    pub clustered: bool,
    pub corrector_e: Option<f64>,
    pub corrector_e_plain: Option<f64>,
    pub factor_resid: Option<f64>,
    /// `|(λ_ε − shift) − ξ_ε|` of the weighted problem.
    pub shift_residual: Option<f64>,
    pub pairing: Option<PairingDiagnostic>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairingDiagnostic {
    pub value: f64,
    pub target: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub n: usize,
    pub eps: f64,
    pub vertices: usize,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
    pub normalization_defect: f64,
    pub weighted_normalization_defect: Option<f64>,
    /// `‖D(P_ε u)‖ / ‖Du‖` for `k = 1` on each side.
    pub extension_ratio: [f64; 2],
    /// `|ελ^{k,+} + ελ^{k,−}|` in the pencil regime.
    pub pencil_symmetry: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitSummary {
    pub side: String,
    pub kind: LimitKind,
    /// Signed targets for the transformed quantities.
    pub targets: Vec<f64>,
    pub norms: Vec<f64>,
    pub clustered: Vec<bool>,
    pub orthonormality_defect: f64,
    /// Targets recomputed on half the grid, and the difference.
    pub coarse_targets: Vec<f64>,
    pub grid_error: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub hash: String,
    pub q: [[f64; 2]; 2],
    #[serde(rename = "M")]
    pub m: f64,
    pub nu2: Option<f64>,
    pub lambda1neg: Option<f64>,
    pub q_tilde: Option<[[f64; 2]; 2]>,
    #[serde(rename = "M_tilde")]
    pub m_tilde: Option<f64>,
    pub density_negated: bool,
}

/// Wall-clock times; never serialized and ignored by equality so reports
/// stay reproducible.
#[derive(Debug, Clone, Default)]
pub struct Timings(pub Vec<(String, f64)>);

impl PartialEq for Timings {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub version: String,
    pub plan: SweepPlan,
    pub model: ModelSummary,
    pub limits: Vec<LimitSummary>,
    pub runs: Vec<RunSummary>,
    pub rows: Vec<Row>,
    #[serde(skip)]
    pub timings: Timings,
}

impl ConvergenceReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Rows for one `(side, k)` in sweep order.
    pub fn series(&self, side: &str, k: usize) -> Vec<&Row> {
        self.rows.iter().filter(|r| r.side == side && r.k == k).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        let opt = |x: Option<f64>| x.map(|v| format!("{v:e}")).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{:e},{},{},{:e},{:e},{:e},{:e},{:e},{},{}",
                self.plan.regime.name(),
                r.n,
                r.eps,
                r.k,
                r.side,
                r.lambda_raw,
                r.lambda_transformed,
                r.limit,
                r.abs_err,
                r.rel_err,
                opt(r.corrector_e),
                opt(r.factor_resid)
            );
        }
        out
    }
}

/// Everything shared by the per-ε jobs.
struct Context {
    plan: SweepPlan,
    cell: CellMesh,
    coeff: CoefficientField,
    rho: DensityField,
    model: HomogenizedModel,
    /// Indexed by side: 0 is `+`, 1 is `−` of the solved density.
    limits: [LimitSolution; 2],
    /// The limits rescaled to what the ε-normalized eigenfunctions
    /// actually approach.
    compare: [LimitSolution; 2],
    correctors: [Vec<Option<Corrector>>; 2],
    weighted: Option<(CoefficientField, DensityField)>,
    pairing_psi1: Option<PeriodicField>,
    pairing_targets: [Vec<f64>; 2],
}

impl Context {
    /// Sign that maps quantities of the working density back to `ρ`.
    fn sigma(&self) -> f64 {
        if self.model.density_negated {
            -1.0
        } else {
            1.0
        }
    }

    /// The side whose eigenvalues blow up like `1/ε²`, if any.
    fn blowing_side(&self) -> Option<usize> {
        match self.plan.regime {
            Regime::MZero => None,
            Regime::MPos => Some(1),
            Regime::MNeg => Some(0),
        }
    }

    fn target(&self, side: usize, k: usize) -> f64 {
        let l = &self.limits[side];
        match l.kind {
            LimitKind::Pencil => {
                if side == 0 {
                    l.eigenvalues[k]
                } else {
                    -l.eigenvalues[k]
                }
            }
            _ => self.sigma() * l.eigenvalues[k],
        }
    }

    fn transformed(&self, side: usize, lambda: f64, eps: f64) -> f64 {
        if self.plan.regime == Regime::MZero {
            eps * lambda
        } else if Some(side) == self.blowing_side() {
            lambda - self.sigma() * self.model.lambda1neg.expect("regime has a local eigenvalue") / (eps * eps)
        } else {
            lambda
        }
    }
}

fn bump(x: [f64; 2]) -> f64 {
    16.0 * x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1])
}

fn model_hash(model: &HomogenizedModel) -> Result<String> {
    let digest = Sha256::digest(model.to_json()?.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn thread_cap() -> usize {
    let avail = std::thread::available_parallelism().map_or(1, |n| n.get());
    std::env::var("PERFHOM_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v > 0)
        .unwrap_or(avail)
}

/// `∬ u₁ ψ₀(x) ρ(y)` for `ψ₁ = ρχ_{Y*}`.
fn pairing_target(limit: &LimitSolution, k: usize, lambda0: f64, cell: &CellMesh, model: &HomogenizedModel, rho: &DensityField) -> f64 {
    let ones = vec![1.0; cell.num_vertices()];
    let r: Vec<f64> = (0..2)
        .map(|j| weighted_product(cell, Some(&rho.values), &model.chi[j], &ones))
        .collect();
    let nu2 = model.nu2.unwrap_or(0.0);
    let mesh = limit.mesh();
    let u0 = &limit.eigenfunctions[k];
    let psi0: Vec<f64> = mesh.vertices.iter().map(|&p| bump(p)).collect();
    let grads = field_gradients(&mesh, u0);
    let mut d = [0.0; 2];
    for (e, t) in mesh.triangles.iter().enumerate() {
        let mean = t.iter().map(|&v| psi0[v]).sum::<f64>() / 3.0;
        d[0] += grads[e][0] * mesh.areas[e] * mean;
        d[1] += grads[e][1] * mesh.areas[e] * mean;
    }
    lambda0 * nu2 * weighted_product(&mesh, None, u0, &psi0) - r[0] * d[0] - r[1] * d[1]
}

fn build_context(plan: &SweepPlan) -> Result<Context> {
    plan.validate()?;
    let cell = build_cell_mesh(&plan.geometry)?;
    let coeff = preset_coefficients(plan.coefficients, &cell)?;
    let rho = preset_density(plan.density, &cell)?;
    let model = homogenize(&cell, &coeff, &rho)?;
    if model.regime != plan.regime {
        return Err(Error::Config(vec![format!(
            "density average {} puts the run in regime {}, not {}",
            rho.average, model.regime, plan.regime
        )]));
    }
    let limits = [
        limit_for(&model, true, plan.count, plan.limit_grid)?,
        limit_for(&model, false, plan.count, plan.limit_grid)?,
    ];
    let compare = [comparison_limit(&limits[0]), comparison_limit(&limits[1])];
    let weighted = match &model.theta2_weights {
        Some(w) if plan.diagnostics.factorization || plan.diagnostics.corrector_energy => Some((
            coeff.weighted(w, "weighted")?,
            rho.weighted(w, &cell, "weighted")?,
        )),
        _ => None,
    };
    let mut ctx = Context {
        plan: plan.clone(),
        cell,
        coeff,
        rho,
        model,
        limits,
        compare,
        correctors: [Vec::new(), Vec::new()],
        weighted,
        pairing_psi1: None,
        pairing_targets: [Vec::new(), Vec::new()],
    };
    for side in 0..2 {
        for k in 0..plan.count {
            let lambda0 = ctx.target(side, k);
            let corr = if plan.diagnostics.corrector_energy && !ctx.limits[side].clustered[k] {
                Some(corrector_field(&ctx.compare[side], k, &ctx.model, &ctx.cell, Some(lambda0))?)
            } else {
                None
            };
            ctx.correctors[side].push(corr);
        }
    }
    if plan.diagnostics.pairing && plan.regime == Regime::MZero {
        ctx.pairing_psi1 = Some(PeriodicField::density_on_solid(&ctx.cell, &ctx.rho)?);
        for side in 0..2 {
            ctx.pairing_targets[side] = (0..plan.count)
                .map(|k| {
                    let l0 = ctx.target(side, k);
                    pairing_target(&ctx.compare[side], k, l0, &ctx.cell, &ctx.model, &ctx.rho)
                })
                .collect();
        }
    }
    Ok(ctx)
}

/// Under `∫ρ^ε u^k u^l = ±εδ_kl` the expansion `u_ε ≈ u₀ + εu₁` gives
/// `(λ₀^k + λ₀^l) ν² ∫u₀^k u₀^l = ±δ_kl`, i.e. half the stated `∫|u₀|²`.
/// Fine-scale comparisons in the pencil regime use `u₀/√2`.
pub fn comparison_limit(limit: &LimitSolution) -> LimitSolution {
    let mut out = limit.clone();
    if limit.kind == LimitKind::Pencil {
        for f in &mut out.eigenfunctions {
            f.iter_mut().for_each(|x| *x *= std::f64::consts::FRAC_1_SQRT_2);
        }
        out.norms.iter_mut().for_each(|x| *x *= 0.5);
    }
    out
}

fn sample(grid: &GridMesh, values: &[f64], x: [f64; 2]) -> f64 {
    let (t, b) = grid.locate(x);
    let tri = grid.triangles[t];
    (0..3).map(|i| b[i] * values[tri[i]]).sum()
}

/// `‖D(P_ε u) − D u₀ − D_y u₁(·, ·/ε)‖_{L²(Ω)}`, integrated exactly on the
/// limit grid, which refines the hole-filled grid. Without the corrector
/// only `D u₀` is subtracted.
pub fn corrector_energy(filled: &GridMesh, extended: &[f64], eps: f64, corr: &Corrector, with_corrector: bool) -> Result<f64> {
    let fine = &corr.grid;
    if fine.size % filled.size != 0 {
        return Err(Error::Limit(format!(
            "limit grid {} does not refine the fine-scale grid {}",
            fine.size, filled.size
        )));
    }
    let coarse = field_gradients(filled, extended);
    let mut total = 0.0;
    for (e, t) in fine.triangles.iter().enumerate() {
        let p: Vec<[f64; 2]> = t.iter().map(|&v| fine.vertices[v]).collect();
        let c = [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0];
        let gp = coarse[filled.locate(c).0];
        let g0 = corr.u0_gradients[e];
        let base = [gp[0] - g0[0], gp[1] - g0[1]];
        let mut vals = [base; 3];
        if with_corrector {
            let y = [c[0] / eps, c[1] / eps];
            let gc1 = corr.cell_value(&corr.chi[0], y).1;
            let gc2 = corr.cell_value(&corr.chi[1], y).1;
            let fixed = [-g0[0] * gc1[0] - g0[1] * gc2[0], -g0[0] * gc1[1] - g0[1] * gc2[1]];
            let g00 = corr.chi0.as_ref().map(|c0| corr.cell_value(c0, y).1);
            for i in 0..3 {
                let mut d = fixed;
                if let Some(g) = g00 {
                    let u0 = corr.u0[t[i]];
                    d[0] += corr.lambda0 * u0 * g[0];
                    d[1] += corr.lambda0 * u0 * g[1];
                }
                vals[i] = [base[0] - d[0], base[1] - d[1]];
            }
        }
        let dot = |a: [f64; 2], b: [f64; 2]| a[0] * b[0] + a[1] * b[1];
        let sum = [vals[0][0] + vals[1][0] + vals[2][0], vals[0][1] + vals[1][1] + vals[2][1]];
        let diag: f64 = vals.iter().map(|&v| dot(v, v)).sum();
        total += fine.areas[e] / 12.0 * (diag + dot(sum, sum));
    }
    Ok(total.sqrt())
}

/// `min_± ‖u ∓ θ^ε v‖ / ‖u‖` over `Ω^ε`, with `θ^ε` the cell function
/// `θ` copied onto the domain.
pub fn factorization_residual(mesh: &DomainMesh, cell: &CellMesh, theta: &[f64], u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != mesh.num_vertices() || v.len() != mesh.num_vertices() {
        return Err(Error::Dimension("factorization fields do not match the mesh".into()));
    }
    let map = mesh.cell_vertex_map(cell)?;
    let w: Vec<f64> = map.iter().zip(v).map(|(&c, &x)| theta[c] * x).collect();
    let norm = weighted_product(mesh, None, u, u).sqrt();
    let best = [1.0, -1.0]
        .iter()
        .map(|&s| {
            let d: Vec<f64> = u.iter().zip(&w).map(|(a, b)| a - s * b).collect();
            weighted_product(mesh, None, &d, &d).sqrt()
        })
        .fold(f64::INFINITY, f64::min);
    Ok(best / norm)
}

struct RunOutput {
    summary: RunSummary,
    rows: Vec<Row>,
    seconds: f64,
}

fn run_one(ctx: &Context, n: usize) -> Result<RunOutput> {
    let start = Instant::now();
    let plan = &ctx.plan;
    let count = plan.count;
    let geom = plan.geometry.with_resolution(plan.s);
    let mesh = build_domain_mesh_with_budget(n, plan.s, &geom, plan.budget)?;
    let eps = mesh.eps();
    let coeff = ctx.coeff.on_domain(&mesh, &ctx.cell)?;
    let rho = ctx.rho.on_domain(&mesh, &ctx.cell)?;
    let tag = if plan.regime == Regime::MZero {
        NormTag::EpsScaled
    } else {
        NormTag::Signed
    };
    let sol = solve_eps_spectrum(&mesh, &coeff, &rho, count, count, tag)?;
    let normalization_defect = sol.normalization_defect(&mesh, &rho);

    let blowing = ctx.blowing_side();
    let weighted_sol: Option<EpsSolution> = match (&ctx.weighted, blowing) {
        (Some((a, r)), Some(side)) => {
            let a = a.on_domain(&mesh, &ctx.cell)?;
            let r = r.on_domain(&mesh, &ctx.cell)?;
            let (p, q) = if side == 0 { (count, 0) } else { (0, count) };
            Some(solve_eps_spectrum(&mesh, &a, &r, p, q, NormTag::WeightedSigned)?)
        }
        _ => None,
    };
    let weighted_normalization_defect = match (&weighted_sol, &ctx.weighted) {
        (Some(ws), Some((_, r))) => Some(ws.normalization_defect(&mesh, &r.on_domain(&mesh, &ctx.cell)?)),
        _ => None,
    };

    let filled = mesh.filled();
    let psi0: Vec<f64> = filled.vertices.iter().map(|&p| bump(p)).collect();
    let mut rows = Vec::new();
    let mut extension_ratio = [0.0; 2];
    for side in 0..2 {
        let positive = side == 0;
        let limit = &ctx.limits[side];
        let lgrid = limit.mesh();
        for k in 0..count {
            let lambda = sol.lambda(positive, k);
            let transformed = ctx.transformed(side, lambda, eps);
            let target = ctx.target(side, k);
            let abs_err = (transformed - target).abs();
            let is_blowing = Some(side) == blowing;

            // Field compared with the limit: v_ε on the blowing side.
            let ws = weighted_sol.as_ref().filter(|_| is_blowing);
            let u = sol.field(positive, k);
            let compared = match ws {
                Some(ws) => ws.field(positive, k),
                None => u.clone(),
            };
            let ext = harmonic_extension(&mesh, &compared)?;
            if k == 0 {
                extension_ratio[side] = ext.gradient_ratio;
            }
            // Align the sign with the limit eigenfunction.
            let on_limit: Vec<f64> = lgrid.vertices.iter().map(|&x| sample(&filled, &ext.values, x)).collect();
            let sign = if weighted_product(&lgrid, None, &on_limit, &limit.eigenfunctions[k]) < 0.0 {
                -1.0
            } else {
                1.0
            };
            let extended: Vec<f64> = ext.values.iter().map(|x| sign * x).collect();

            let (corrector_e, corrector_e_plain) = match &ctx.correctors[side][k] {
                Some(c) if plan.diagnostics.corrector_energy => (
                    Some(corrector_energy(&filled, &extended, eps, c, true)?),
                    Some(corrector_energy(&filled, &extended, eps, c, false)?),
                ),
                _ => (None, None),
            };
            let (factor_resid, shift_residual) = match ws {
                Some(ws) if plan.diagnostics.factorization => {
                    let theta = ctx.model.theta1neg.as_ref().expect("weighted regime has θ");
                    (
                        Some(factorization_residual(&mesh, &ctx.cell, theta, &u, &ws.field(positive, k))?),
                        Some((transformed - ws.lambda(positive, k)).abs()),
                    )
                }
                _ => (None, None),
            };
            let pairing = match &ctx.pairing_psi1 {
                Some(psi1) => {
                    let value = scaled_pairing(&filled, &extended, &psi0, psi1, n)?;
                    let target = ctx.pairing_targets[side][k];
                    Some(PairingDiagnostic {
                        value,
                        target,
                        error: (value - target).abs(),
                    })
                }
                None => None,
            };
            rows.push(Row {
                n,
                eps,
                k: k + 1,
                side: if positive { "+" } else { "-" }.to_string(),
                lambda_raw: lambda,
                lambda_transformed: transformed,
                limit: target,
                abs_err,
                rel_err: abs_err / target.abs(),
                clustered: limit.clustered[k],
                corrector_e,
                corrector_e_plain,
                factor_resid,
                shift_residual,
                pairing,
            });
        }
    }
    let pencil_symmetry = (plan.regime == Regime::MZero).then(|| {
        (0..count)
            .map(|k| (eps * sol.lambda(true, k) + eps * sol.lambda(false, k)).abs())
            .collect()
    });
    Ok(RunOutput {
        summary: RunSummary {
            n,
            eps,
            vertices: mesh.num_vertices(),
            positive: sol.spectrum.positive.iter().map(|p| p.lambda).collect(),
            negative: sol.spectrum.negative.iter().map(|p| p.lambda).collect(),
            normalization_defect,
            weighted_normalization_defect,
            extension_ratio,
            pencil_symmetry,
        },
        rows,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn limit_summaries(ctx: &Context) -> Result<Vec<LimitSummary>> {
    let plan = &ctx.plan;
    (0..2)
        .map(|side| {
            let l = &ctx.limits[side];
            let coarse = limit_for(&ctx.model, side == 0, plan.count, (plan.limit_grid / 2).max(2))?;
            let targets: Vec<f64> = (0..plan.count).map(|k| ctx.target(side, k)).collect();
            let flip = |x: f64| match l.kind {
                LimitKind::Pencil => {
                    if side == 0 {
                        x
                    } else {
                        -x
                    }
                }
                _ => ctx.sigma() * x,
            };
            let coarse_targets: Vec<f64> = coarse.eigenvalues.iter().map(|&x| flip(x)).collect();
            Ok(LimitSummary {
                side: if side == 0 { "+" } else { "-" }.into(),
                kind: l.kind,
                grid_error: targets.iter().zip(&coarse_targets).map(|(a, b)| (a - b).abs()).collect(),
                targets,
                norms: l.norms.clone(),
                clustered: l.clustered.clone(),
                orthonormality_defect: limit_orthonormality_check(l).max_defect,
                coarse_targets,
            })
        })
        .collect()
}

pub fn run_sweep(plan: &SweepPlan) -> Result<ConvergenceReport> {
    let start = Instant::now();
    let ctx = build_context(plan)?;
    let mut timings = vec![("cell+limits".to_string(), start.elapsed().as_secs_f64())];
    let cap = thread_cap().min(plan.n_values.len()).max(1);
    let mut outputs: Vec<Option<Result<RunOutput>>> = (0..plan.n_values.len()).map(|_| None).collect();
    // Largest runs first so the slowest job starts earliest.
    let mut order: Vec<usize> = (0..plan.n_values.len()).collect();
    order.reverse();
    for batch in order.chunks(cap) {
        let results: Vec<(usize, Result<RunOutput>)> = std::thread::scope(|scope| {
            let handles: Vec<_> = batch
                .iter()
                .map(|&i| {
                    let ctx = &ctx;
                    let n = plan.n_values[i];
                    (i, scope.spawn(move || run_one(ctx, n)))
                })
                .collect();
            handles
                .into_iter()
                .map(|(i, h)| (i, h.join().unwrap_or_else(|_| Err(Error::Eigen("fine-scale job panicked".into())))))
                .collect()
        });
        for (i, r) in results {
            outputs[i] = Some(r);
        }
    }
    let mut runs = Vec::new();
    let mut rows = Vec::new();
    for out in outputs {
        let out = out.expect("every job ran")?;
        timings.push((format!("n={}", out.summary.n), out.seconds));
        runs.push(out.summary);
        rows.extend(out.rows);
    }
    if let Some(r) = rows.iter().find(|r| !(r.abs_err.is_finite() && r.rel_err.is_finite())) {
        return Err(Error::Eigen(format!("non-finite error at n = {}, k = {}", r.n, r.k)));
    }
    let model = &ctx.model;
    Ok(ConvergenceReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        plan: plan.clone(),
        model: ModelSummary {
            hash: model_hash(model)?,
            q: model.q,
            m: model.m,
            nu2: model.nu2,
            lambda1neg: model.lambda1neg,
            q_tilde: model.q_tilde,
            m_tilde: model.m_tilde,
            density_negated: model.density_negated,
        },
        limits: limit_summaries(&ctx)?,
        runs,
        rows,
        timings: Timings(timings),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
    Svg,
}

impl std::str::FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            "svg" => Ok(Self::Svg),
            other => Err(Error::Parse(format!("unknown format `{other}`"))),
        }
    }
}

/// Log-log chart with one polyline per series; points with non-positive
/// values are dropped.
pub fn svg_chart(title: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (w, h, pad) = (480.0, 320.0, 48.0);
    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|(_, p)| p.iter().copied())
        .filter(|&(x, y)| x > 0.0 && y > 0.0)
        .map(|(x, y)| (x.log10(), y.log10()))
        .collect();
    let lo = |f: fn(&(f64, f64)) -> f64| pts.iter().map(f).fold(f64::INFINITY, f64::min);
    let hi = |f: fn(&(f64, f64)) -> f64| pts.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    let (x0, x1, y0, y1) = if pts.is_empty() {
        (0.0, 1.0, 0.0, 1.0)
    } else {
        (lo(|p| p.0), hi(|p| p.0), lo(|p| p.1), hi(|p| p.1))
    };
    let span = |a: f64, b: f64| if b > a { b - a } else { 1.0 };
    let px = |x: f64| pad + (x - x0) / span(x0, x1) * (w - 2.0 * pad);
    let py = |y: f64| h - pad - (y - y0) / span(y0, y1) * (h - 2.0 * pad);
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <title>{title}</title>\n\
         <rect x=\"{pad}\" y=\"{pad}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#888\"/>\n\
         <text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">log10 eps</text>\n\
         <text x=\"12\" y=\"{}\" font-size=\"12\">log10 error</text>\n",
        w - 2.0 * pad,
        h - 2.0 * pad,
        w / 2.0,
        h - 12.0,
        pad - 8.0
    );
    for (i, (name, p)) in series.iter().enumerate() {
        let coords: Vec<String> = p
            .iter()
            .filter(|&&(x, y)| x > 0.0 && y > 0.0)
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x.log10()), py(y.log10())))
            .collect();
        let _ = writeln!(
            s,
            "<polyline data-series=\"{name}\" fill=\"none\" stroke=\"{}\" points=\"{}\"/>",
            colors[i % colors.len()],
            coords.join(" ")
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `{regime}_{quantity}.{ext}` files under `dir` and returns their
/// paths.
pub fn emit_report(report: &ConvergenceReport, dir: &Path, formats: &[Format]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let regime = report.plan.regime.name();
    let mut written = Vec::new();
    let mut put = |name: String, body: String| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, body)?;
        written.push(path);
        Ok(())
    };
    for f in formats {
        match f {
            Format::Csv => put(format!("{regime}_convergence.csv"), report.to_csv())?,
            Format::Json => put(format!("{regime}_report.json"), report.to_json()?)?,
            Format::Svg => {
                for (side, label) in [("+", "plus"), ("-", "minus")] {
                    let series = |pick: fn(&Row) -> Option<f64>| -> Vec<(String, Vec<(f64, f64)>)> {
                        (1..=report.plan.count)
                            .map(|k| {
                                let pts = report
                                    .series(side, k)
                                    .iter()
                                    .filter_map(|r| pick(r).map(|v| (r.eps, v)))
                                    .collect();
                                (format!("k={k}"), pts)
                            })
                            .collect()
                    };
                    put(
                        format!("{regime}_error_{label}.svg"),
                        svg_chart(&format!("{regime} eigenvalue error ({side})"), &series(|r| Some(r.abs_err))),
                    )?;
                    let e = series(|r| r.corrector_e);
                    if e.iter().any(|(_, p)| !p.is_empty()) {
                        put(
                            format!("{regime}_corrector_{label}.svg"),
                            svg_chart(&format!("{regime} corrector energy ({side})"), &e),
                        )?;
                    }
                }
            }
        }
    }
    let mut t = String::new();
    for (name, secs) in &report.timings.0 {
        let _ = writeln!(t, "{name} {secs:.3}");
    }
    std::fs::write(dir.join(format!("{regime}_timings.txt")), t)?;
    Ok(written)
}
