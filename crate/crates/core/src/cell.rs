//! Cell problems on `Y*`: correctors `χʲ`, `χ⁰`, the effective tensor `q`,
//! `ν²`, the first negative local eigenpair `(λ₁⁻, θ₁⁻)` and the
//! `θ₁⁻`-weighted data used when the density has positive average.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::assembly::{
    assemble_functionals, assemble_mass, assemble_stiffness, assemble_weighted_mass,
    field_gradients, integrate, weighted_product, DofMap,
};
use crate::error::{Error, Result};
use crate::geometry::{CellGeometry, CellMesh, Triangulation};
use crate::linalg::norm2;
use crate::materials::{tensor_eigenvalues, CoefficientField, DensityField, Tensor2};
use crate::pencil::deflate_constants;

/// `|M|` at or below this value is treated as zero average.
pub const ZERO_AVERAGE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    #[serde(rename = "M_pos")]
    MPos,
    #[serde(rename = "M_zero")]
    MZero,
    #[serde(rename = "M_neg")]
    MNeg,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Self::MPos => "M_pos",
            Self::MZero => "M_zero",
            Self::MNeg => "M_neg",
        }
    }

    pub fn of_average(m: f64) -> Self {
        if m.abs() <= ZERO_AVERAGE_TOL {
            Self::MZero
        } else if m > 0.0 {
            Self::MPos
        } else {
            Self::MNeg
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "M_pos" => Ok(Self::MPos),
            "M_zero" => Ok(Self::MZero),
            "M_neg" => Ok(Self::MNeg),
            other => Err(Error::Parse(format!("unknown regime `{other}`"))),
        }
    }
}

/// Residual of a corrector solve relative to its right-hand side.
fn relative_residual(k: &crate::assembly::SymmetricOperator, u: &[f64], f: &[f64]) -> f64 {
    let r: Vec<f64> = k.apply(u).iter().zip(f).map(|(a, b)| a - b).collect();
    norm2(&r) / norm2(f).max(1.0)
}

/// The two correctors `χ¹, χ²` as vertex values on the cell mesh.
pub fn solve_cell_correctors(mesh: &CellMesh, coeff: &CoefficientField) -> Result<[Vec<f64>; 2]> {
    let map = DofMap::periodic(mesh, true);
    let k = assemble_stiffness(mesh, coeff, &map)?;
    let zero = DensityField::from_values("zero", vec![0.0; mesh.num_triangles()], mesh)?;
    let f = assemble_functionals(mesh, coeff, &zero, &map)?;
    let solver = k.mean_zero_solver()?;
    let mut out: [Vec<f64>; 2] = Default::default();
    for j in 0..2 {
        let (u, _) = solver.solve(&f.l[j])?;
        let res = relative_residual(&k, &u, &f.l[j]);
        if res > 1e-10 {
            return Err(Error::Cell(format!("corrector {} residual {res:e}", j + 1)));
        }
        out[j] = map.expand(&u);
    }
    Ok(out)
}

/// `χʲ` for a single direction `j ∈ {1, 2}`.
pub fn solve_cell_corrector(mesh: &CellMesh, coeff: &CoefficientField, j: usize) -> Result<Vec<f64>> {
    if !(1..=2).contains(&j) {
        return Err(Error::Cell(format!("direction {j} is not 1 or 2")));
    }
    let [c1, c2] = solve_cell_correctors(mesh, coeff)?;
    Ok(if j == 1 { c1 } else { c2 })
}

/// `χ⁰` with `a(χ⁰, v) = ∫ρv`; requires `M = 0`.
pub fn solve_cell_corrector_rho(
    mesh: &CellMesh,
    coeff: &CoefficientField,
    density: &DensityField,
) -> Result<Vec<f64>> {
    if density.average.abs() > ZERO_AVERAGE_TOL {
        return Err(Error::Cell(format!(
            "density average {} is not zero; the problem for chi0 is incompatible",
            density.average
        )));
    }
    let map = DofMap::periodic(mesh, true);
    let k = assemble_stiffness(mesh, coeff, &map)?;
    let f = assemble_functionals(mesh, coeff, density, &map)?;
    let (u, _) = k.solve_mean_zero(&f.l0)?;
    let res = relative_residual(&k, &u, &f.l0);
    if res > 1e-10 {
        return Err(Error::Cell(format!("chi0 residual {res:e}")));
    }
    Ok(map.expand(&u))
}

/// `q_ij = ∫ a_ij − Σ_l ∫ a_il ∂_l χʲ` as assembled, before symmetrization.
pub fn homogenized_tensor_raw(mesh: &CellMesh, coeff: &CoefficientField, chi: &[Vec<f64>; 2]) -> Result<Tensor2> {
    let mut q = coeff.integral(mesh)?;
    let grads = [field_gradients(mesh, &chi[0]), field_gradients(mesh, &chi[1])];
    for (e, (&area, a)) in mesh.areas().iter().zip(&coeff.tensors).enumerate() {
        for i in 0..2 {
            for j in 0..2 {
                q[i][j] -= area * (a[i][0] * grads[j][e][0] + a[i][1] * grads[j][e][1]);
            }
        }
    }
    Ok(q)
}

/// [`homogenized_tensor_raw`], symmetrized after an asymmetry check.
pub fn homogenized_tensor(mesh: &CellMesh, coeff: &CoefficientField, chi: &[Vec<f64>; 2]) -> Result<Tensor2> {
    let q = homogenized_tensor_raw(mesh, coeff, chi)?;
    let asym = (q[0][1] - q[1][0]).abs();
    if asym > 1e-9 {
        return Err(Error::Cell(format!("effective tensor asymmetry {asym:e}")));
    }
    let off = 0.5 * (q[0][1] + q[1][0]);
    Ok([[q[0][0], off], [off, q[1][1]]])
}

/// `Σ ∫ a D(yᵢ − χⁱ)·D(yⱼ − χʲ)`, equal to `q` at the discrete level.
pub fn energy_tensor(mesh: &CellMesh, coeff: &CoefficientField, chi: &[Vec<f64>; 2]) -> Result<Tensor2> {
    let grads = [field_gradients(mesh, &chi[0]), field_gradients(mesh, &chi[1])];
    let mut q = [[0.0; 2]; 2];
    for (e, (&area, a)) in mesh.areas().iter().zip(&coeff.tensors).enumerate() {
        let d = |i: usize| {
            let g = grads[i][e];
            if i == 0 {
                [1.0 - g[0], -g[1]]
            } else {
                [-g[0], 1.0 - g[1]]
            }
        };
        for i in 0..2 {
            for j in 0..2 {
                let (di, dj) = (d(i), d(j));
                let adj = [a[0][0] * dj[0] + a[0][1] * dj[1], a[1][0] * dj[0] + a[1][1] * dj[1]];
                q[i][j] += area * (di[0] * adj[0] + di[1] * adj[1]);
            }
        }
    }
    Ok(q)
}

/// `a(u, u)` for a P1 vertex field.
pub fn energy(mesh: &CellMesh, coeff: &CoefficientField, u: &[f64]) -> f64 {
    field_gradients(mesh, u)
        .iter()
        .zip(mesh.areas())
        .zip(&coeff.tensors)
        .map(|((g, &area), a)| {
            area * (g[0] * (a[0][0] * g[0] + a[0][1] * g[1]) + g[1] * (a[1][0] * g[0] + a[1][1] * g[1]))
        })
        .sum()
}

/// `ν² = a(χ⁰, χ⁰)`, cross-checked against `∫ρχ⁰`.
pub fn nu_squared(mesh: &CellMesh, coeff: &CoefficientField, density: &DensityField, chi0: &[f64]) -> Result<f64> {
    let nu2 = energy(mesh, coeff, chi0);
    let rho_chi: f64 = mesh
        .triangles()
        .iter()
        .zip(mesh.areas())
        .zip(&density.values)
        .map(|((t, &a), &r)| r * a / 3.0 * (chi0[t[0]] + chi0[t[1]] + chi0[t[2]]))
        .sum();
    if !(nu2 > 0.0) {
        return Err(Error::Cell(format!("nu^2 = {nu2:e} is not positive")));
    }
    if (rho_chi - nu2).abs() > 1e-8 * nu2 {
        return Err(Error::Cell(format!(
            "int rho chi0 = {rho_chi:e} differs from a(chi0, chi0) = {nu2:e}"
        )));
    }
    Ok(nu2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalSpectrum {
    pub lambda1neg: f64,
    /// Vertex values of `θ₁⁻`, positive, `∫θ² = |Y*|`.
    pub theta: Vec<f64>,
    /// `∫ ρ θ²`, negative.
    pub rho_theta2: f64,
}

/// First negative eigenpair of the periodic cell problem
/// `a(θ, v) = λ ∫ρθv`, with `M > 0`.
pub fn local_spectrum(mesh: &CellMesh, coeff: &CoefficientField, density: &DensityField) -> Result<LocalSpectrum> {
    if density.average <= ZERO_AVERAGE_TOL {
        return Err(Error::Cell(format!(
            "local spectral problem needs a positive density average, got {}",
            density.average
        )));
    }
    let map = DofMap::periodic(mesh, false);
    let k = assemble_stiffness(mesh, coeff, &map)?;
    let b = assemble_weighted_mass(mesh, density, &map)?;
    let pencil = deflate_constants(&k.matrix, &b.matrix)?;
    let sp = pencil.solve(0, 1)?;
    let pair = &sp.negative[0];
    let mut theta = map.expand(&pair.vector);

    let big = theta.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if theta.iter().sum::<f64>() < 0.0 {
        theta.iter_mut().for_each(|v| *v = -*v);
    }
    let worst = theta.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    if worst < -1e-10 * big {
        return Err(Error::Cell(format!(
            "first negative eigenfunction changes sign (min {worst:e}, max {big:e})"
        )));
    }
    if worst <= 0.0 {
        return Err(Error::Cell("first negative eigenfunction vanishes at a vertex".into()));
    }

    let area = mesh.total_area();
    let mass = assemble_mass(mesh, &DofMap::free(mesh.num_vertices()))?;
    let norm = (mass.form(&theta, &theta) / area).sqrt();
    theta.iter_mut().for_each(|v| *v /= norm);
    let rho_theta2 = weighted_product(mesh, Some(&density.values), &theta, &theta);
    if !(rho_theta2 < 0.0) {
        return Err(Error::Cell(format!("int rho theta^2 = {rho_theta2:e} is not negative")));
    }
    Ok(LocalSpectrum {
        lambda1neg: pair.lambda,
        theta,
        rho_theta2,
    })
}

/// Per-element mean of the vertex values of `θ²`.
pub fn element_theta2(mesh: &CellMesh, theta: &[f64]) -> Vec<f64> {
    mesh.triangles()
        .iter()
        .map(|t| t.iter().map(|&v| theta[v] * theta[v]).sum::<f64>() / 3.0)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedCellData {
    pub a_tilde: CoefficientField,
    pub rho_tilde: DensityField,
    pub chi_tilde: [Vec<f64>; 2],
    pub q_tilde: Tensor2,
    pub m_tilde: f64,
}

pub fn weighted_cell_data(
    mesh: &CellMesh,
    coeff: &CoefficientField,
    density: &DensityField,
    theta: &[f64],
) -> Result<WeightedCellData> {
    let w = element_theta2(mesh, theta);
    let a_tilde = coeff.weighted(&w, "theta-weighted")?;
    let rho_tilde = density.weighted(&w, mesh, "theta-weighted")?;
    let chi_tilde = solve_cell_correctors(mesh, &a_tilde)?;
    let q_tilde = homogenized_tensor(mesh, &a_tilde, &chi_tilde)?;
    let m_tilde = rho_tilde.average;
    if !(m_tilde < 0.0) {
        return Err(Error::Cell(format!("weighted density average {m_tilde:e} is not negative")));
    }
    Ok(WeightedCellData {
        a_tilde,
        rho_tilde,
        chi_tilde,
        q_tilde,
        m_tilde,
    })
}

/// Everything the limit problems and the fine-scale comparisons consume.
///
/// For a negative density average the model is built for `−ρ` and
/// `density_negated` is set; all stored quantities then refer to `−ρ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogenizedModel {
    pub regime: Regime,
    pub geometry: CellGeometry,
    pub coefficient_preset: String,
    pub density_preset: String,
    pub density_negated: bool,
    pub cell_area: f64,
    pub q: Tensor2,
    pub chi: [Vec<f64>; 2],
    pub chi0: Option<Vec<f64>>,
    pub nu2: Option<f64>,
    #[serde(rename = "M")]
    pub m: f64,
    pub lambda1neg: Option<f64>,
    pub theta1neg: Option<Vec<f64>>,
    pub q_tilde: Option<Tensor2>,
    pub chi_tilde: Option<[Vec<f64>; 2]>,
    #[serde(rename = "M_tilde")]
    pub m_tilde: Option<f64>,
    /// Per-element `θ²` weights behind `q̃` and `M̃`.
    pub theta2_weights: Option<Vec<f64>>,
}

impl HomogenizedModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Smallest eigenvalues of `q` and `q̃`.
    pub fn tensor_minima(&self) -> (f64, Option<f64>) {
        (
            tensor_eigenvalues(&self.q)[0],
            self.q_tilde.map(|t| tensor_eigenvalues(&t)[0]),
        )
    }

    /// Density actually used for the stored quantities.
    pub fn working_density(&self, density: &DensityField, mesh: &CellMesh) -> Result<DensityField> {
        if self.density_negated {
            density.negated(mesh)
        } else {
            Ok(density.clone())
        }
    }
}

pub fn homogenize(mesh: &CellMesh, coeff: &CoefficientField, density: &DensityField) -> Result<HomogenizedModel> {
    let regime = Regime::of_average(density.average);
    let negated = regime == Regime::MNeg;
    let rho = if negated { density.negated(mesh)? } else { density.clone() };

    let chi = solve_cell_correctors(mesh, coeff)?;
    let q = homogenized_tensor(mesh, coeff, &chi)?;
    let mut model = HomogenizedModel {
        regime,
        geometry: mesh.geometry.clone(),
        coefficient_preset: coeff.preset.clone(),
        density_preset: density.preset.clone(),
        density_negated: negated,
        cell_area: mesh.total_area(),
        q,
        chi,
        chi0: None,
        nu2: None,
        m: rho.average,
        lambda1neg: None,
        theta1neg: None,
        q_tilde: None,
        chi_tilde: None,
        m_tilde: None,
        theta2_weights: None,
    };
    match regime {
        Regime::MZero => {
            let chi0 = solve_cell_corrector_rho(mesh, coeff, &rho)?;
            model.nu2 = Some(nu_squared(mesh, coeff, &rho, &chi0)?);
            model.chi0 = Some(chi0);
        }
        Regime::MPos | Regime::MNeg => {
            let local = local_spectrum(mesh, coeff, &rho)?;
            let weighted = weighted_cell_data(mesh, coeff, &rho, &local.theta)?;
            model.lambda1neg = Some(local.lambda1neg);
            model.theta2_weights = Some(element_theta2(mesh, &local.theta));
            model.theta1neg = Some(local.theta);
            model.q_tilde = Some(weighted.q_tilde);
            model.chi_tilde = Some(weighted.chi_tilde);
            model.m_tilde = Some(weighted.m_tilde);
        }
    }
    Ok(model)
}

/// `∫ u` over the cell for a vertex field.
pub fn cell_mean(mesh: &CellMesh, u: &[f64]) -> f64 {
    integrate(mesh, u)
}
