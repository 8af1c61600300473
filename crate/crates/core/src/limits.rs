//! Homogenized limit problems on the unperforated unit square and the
//! first-order correctors built from the cell fields.

use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_mass, assemble_stiffness, field_gradients, weighted_product, DofMap};
use crate::cell::{HomogenizedModel, Regime};
use crate::error::{Error, Result};
use crate::finescale::PeriodicField;
use crate::geometry::{CellMesh, GridMesh, Triangulation};
use crate::materials::{tensor_eigenvalues, CoefficientField, Tensor2};
use crate::pencil::solve_spd_pencil;

/// Eigenvalues closer than this relative gap form a cluster.
pub const CLUSTER_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitKind {
    /// `−div((1/M) q Du) = λu`
    Positive,
    /// `−div((1/M̃) q̃ Dv) = ξv`
    Negative,
    /// `−div(q Du) = λ²ν² u`
    Pencil,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitSolution {
    pub kind: LimitKind,
    pub grid: usize,
    pub tensor: Tensor2,
    /// `M`, `M̃` or `ν²`.
    pub scalar: f64,
    /// Eigenvalues of `−div(q Du) = μu`, ascending.
    pub mu: Vec<f64>,
    /// `λ₀ᵏ`, `ξ₀ᵏ`, or `λ₀^{k,+}` (the negative branch is its negative).
    pub eigenvalues: Vec<f64>,
    /// Vertex values on the `grid × grid` unit-square mesh.
    pub eigenfunctions: Vec<Vec<f64>>,
    /// Prescribed `∫|u₀ᵏ|²`.
    pub norms: Vec<f64>,
    pub clustered: Vec<bool>,
}

impl LimitSolution {
    pub fn mesh(&self) -> GridMesh {
        GridMesh::unit_square(self.grid)
    }

    /// `λ₀^{k,±}` of the pencil problem.
    pub fn pencil_pair(&self, k: usize) -> (f64, f64) {
        (self.eigenvalues[k], -self.eigenvalues[k])
    }
}

fn base_problem(q: &Tensor2, count: usize, grid: usize) -> Result<(GridMesh, DofMap, Vec<f64>, Vec<Vec<f64>>)> {
    if tensor_eigenvalues(q)[0] <= 0.0 {
        return Err(Error::Limit(format!("tensor {q:?} is not positive definite")));
    }
    if grid < 2 {
        return Err(Error::Limit("limit grid must have at least 2 cells per side".into()));
    }
    let mesh = GridMesh::unit_square(grid);
    let map = DofMap::dirichlet(mesh.num_vertices(), &mesh.outer_boundary());
    let coeff = CoefficientField::from_tensors("homogenized", vec![*q; mesh.num_triangles()])
        .map_err(|e| Error::Limit(e.to_string()))?;
    let k = assemble_stiffness(&mesh, &coeff, &map)?;
    let m = assemble_mass(&mesh, &map)?;
    let pairs = solve_spd_pencil(&k.matrix, &m.matrix, count)?;
    let mu = pairs.iter().map(|p| p.lambda).collect();
    let fields = pairs.iter().map(|p| map.expand(&p.vector)).collect();
    Ok((mesh, map, mu, fields))
}

fn clusters(values: &[f64]) -> Vec<bool> {
    let n = values.len();
    (0..n)
        .map(|k| {
            let near = |j: usize| (values[j] - values[k]).abs() <= CLUSTER_TOL * values[k].abs();
            (k > 0 && near(k - 1)) || (k + 1 < n && near(k + 1))
        })
        .collect()
}

fn scale_fields(fields: &mut [Vec<f64>], current: f64, target: &[f64]) {
    // Fields come out with ∫u² = `current`.
    for (f, &t) in fields.iter_mut().zip(target) {
        let s = (t / current).sqrt();
        f.iter_mut().for_each(|x| *x *= s);
    }
}

pub fn limit_positive(q: &Tensor2, m: f64, count: usize, grid: usize) -> Result<LimitSolution> {
    if !(m > 0.0) {
        return Err(Error::Limit(format!("density average {m} is not positive")));
    }
    let (_, _, mu, mut fields) = base_problem(q, count, grid)?;
    let norms = vec![1.0 / m; count];
    scale_fields(&mut fields, 1.0, &norms);
    Ok(LimitSolution {
        kind: LimitKind::Positive,
        grid,
        tensor: *q,
        scalar: m,
        eigenvalues: mu.iter().map(|x| x / m).collect(),
        clustered: clusters(&mu),
        mu,
        eigenfunctions: fields,
        norms,
    })
}

pub fn limit_negative(q_tilde: &Tensor2, m_tilde: f64, count: usize, grid: usize) -> Result<LimitSolution> {
    if !(m_tilde < 0.0) {
        return Err(Error::Limit(format!("weighted density average {m_tilde} is not negative")));
    }
    let (_, _, mu, mut fields) = base_problem(q_tilde, count, grid)?;
    let norms = vec![-1.0 / m_tilde; count];
    scale_fields(&mut fields, 1.0, &norms);
    Ok(LimitSolution {
        kind: LimitKind::Negative,
        grid,
        tensor: *q_tilde,
        scalar: m_tilde,
        eigenvalues: mu.iter().map(|x| x / m_tilde).collect(),
        clustered: clusters(&mu),
        mu,
        eigenfunctions: fields,
        norms,
    })
}

pub fn limit_pencil(q: &Tensor2, nu2: f64, count: usize, grid: usize) -> Result<LimitSolution> {
    if !(nu2 > 0.0) {
        return Err(Error::Limit(format!("nu^2 = {nu2} is not positive")));
    }
    let (_, _, mu, mut fields) = base_problem(q, count, grid)?;
    let nu = nu2.sqrt();
    let norms: Vec<f64> = mu.iter().map(|m| 1.0 / (m.sqrt() * nu)).collect();
    scale_fields(&mut fields, 1.0, &norms);
    Ok(LimitSolution {
        kind: LimitKind::Pencil,
        grid,
        tensor: *q,
        scalar: nu2,
        eigenvalues: mu.iter().map(|m| m.sqrt() / nu).collect(),
        clustered: clusters(&mu),
        mu,
        eigenfunctions: fields,
        norms,
    })
}

/// The limit problem matching the model's regime and side.
pub fn limit_for(model: &HomogenizedModel, positive_side: bool, count: usize, grid: usize) -> Result<LimitSolution> {
    match (model.regime, positive_side) {
        (Regime::MZero, _) => limit_pencil(
            &model.q,
            model.nu2.ok_or_else(|| Error::Limit("model has no nu^2".into()))?,
            count,
            grid,
        ),
        // Under ρ ↦ −ρ the sides trade places.
        (Regime::MPos, true) | (Regime::MNeg, false) => limit_positive(&model.q, model.m, count, grid),
        (Regime::MPos, false) | (Regime::MNeg, true) => limit_negative(
            &model.q_tilde.ok_or_else(|| Error::Limit("model has no weighted tensor".into()))?,
            model.m_tilde.ok_or_else(|| Error::Limit("model has no weighted average".into()))?,
            count,
            grid,
        ),
    }
}

/// `u₁(x, y) = −Σⱼ ∂ⱼu₀(x) χʲ(y) + λ₀ u₀(x) χ⁰(y)` and its gradients.
#[derive(Debug, Clone)]
pub struct Corrector {
    pub kind: LimitKind,
    pub grid: GridMesh,
    pub u0: Vec<f64>,
    pub u0_gradients: Vec<[f64; 2]>,
    pub lambda0: f64,
    /// Cell fields extended into the hole.
    pub chi: [PeriodicField; 2],
    pub chi0: Option<PeriodicField>,
    /// Cell-mesh vertex values, kept for residual checks.
    pub chi_cell: [Vec<f64>; 2],
    pub chi0_cell: Option<Vec<f64>>,
    cell_grid: GridMesh,
}

/// Builds the corrector for eigenfunction `k` of `limit`. `lambda0` is the
/// signed limit eigenvalue and only enters in the pencil regime.
pub fn corrector_field(
    limit: &LimitSolution,
    k: usize,
    model: &HomogenizedModel,
    cell: &CellMesh,
    lambda0: Option<f64>,
) -> Result<Corrector> {
    if cell.resolution() != model.geometry.resolution {
        return Err(Error::Limit("cell mesh does not match the model".into()));
    }
    let (chi_cell, chi0_cell, lambda0) = match limit.kind {
        LimitKind::Positive => (model.chi.clone(), None, 0.0),
        LimitKind::Negative => (
            model
                .chi_tilde
                .clone()
                .ok_or_else(|| Error::Limit("weighted regime needs chi-tilde".into()))?,
            None,
            0.0,
        ),
        LimitKind::Pencil => (
            model.chi.clone(),
            Some(
                model
                    .chi0
                    .clone()
                    .ok_or_else(|| Error::Limit("pencil regime needs chi0".into()))?,
            ),
            lambda0.ok_or_else(|| Error::Limit("pencil regime needs the signed eigenvalue".into()))?,
        ),
    };
    let grid = limit.mesh();
    let u0 = limit.eigenfunctions[k].clone();
    let u0_gradients = field_gradients(&grid, &u0);
    let chi = [
        PeriodicField::extended_from_cell(cell, &chi_cell[0])?,
        PeriodicField::extended_from_cell(cell, &chi_cell[1])?,
    ];
    let chi0 = chi0_cell
        .as_ref()
        .map(|c| PeriodicField::extended_from_cell(cell, c))
        .transpose()?;
    Ok(Corrector {
        kind: limit.kind,
        grid,
        u0,
        u0_gradients,
        lambda0,
        chi,
        chi0,
        chi_cell,
        chi0_cell,
        cell_grid: cell.filled(),
    })
}

impl Corrector {
    fn nodal(field: &PeriodicField) -> &[f64] {
        match field {
            PeriodicField::Nodal { values, .. } => values,
            PeriodicField::Element { .. } => unreachable!("cell correctors are nodal"),
        }
    }

    /// Value and gradient of a cell field at `y` (reduced mod 1).
    pub fn cell_value(&self, field: &PeriodicField, y: [f64; 2]) -> (f64, [f64; 2]) {
        let y = [y[0].rem_euclid(1.0), y[1].rem_euclid(1.0)];
        let (t, b) = self.cell_grid.locate(y);
        let tri = self.cell_grid.triangles[t];
        let v = Self::nodal(field);
        let value = (0..3).map(|i| b[i] * v[tri[i]]).sum();
        let g = crate::assembly::element_gradients(&SingleTriangle(&self.cell_grid, t))[0];
        let mut grad = [0.0; 2];
        for i in 0..3 {
            grad[0] += v[tri[i]] * g[i][0];
            grad[1] += v[tri[i]] * g[i][1];
        }
        (value, grad)
    }

    /// `(u₀(x), ∇u₀(x))` from the limit grid.
    pub fn limit_value(&self, x: [f64; 2]) -> (f64, [f64; 2]) {
        let (t, b) = self.grid.locate(x);
        let tri = self.grid.triangles[t];
        ((0..3).map(|i| b[i] * self.u0[tri[i]]).sum(), self.u0_gradients[t])
    }

    pub fn u1(&self, x: [f64; 2], y: [f64; 2]) -> f64 {
        let (u0, g) = self.limit_value(x);
        let mut v = -g[0] * self.cell_value(&self.chi[0], y).0 - g[1] * self.cell_value(&self.chi[1], y).0;
        if let Some(c0) = &self.chi0 {
            v += self.lambda0 * u0 * self.cell_value(c0, y).0;
        }
        v
    }

    /// `D_y u₁(x, y)`.
    pub fn u1_y_gradient(&self, x: [f64; 2], y: [f64; 2]) -> [f64; 2] {
        let (u0, g) = self.limit_value(x);
        let g1 = self.cell_value(&self.chi[0], y).1;
        let g2 = self.cell_value(&self.chi[1], y).1;
        let mut out = [-g[0] * g1[0] - g[1] * g2[0], -g[0] * g1[1] - g[1] * g2[1]];
        if let Some(c0) = &self.chi0 {
            let g0 = self.cell_value(c0, y).1;
            out[0] += self.lambda0 * u0 * g0[0];
            out[1] += self.lambda0 * u0 * g0[1];
        }
        out
    }

    /// `D_x u₀(x) + D_y u₁(x, x/ε)`.
    pub fn composed_gradient(&self, x: [f64; 2], eps: f64) -> [f64; 2] {
        let g = self.limit_value(x).1;
        let d = self.u1_y_gradient(x, [x[0] / eps, x[1] / eps]);
        [g[0] + d[0], g[1] + d[1]]
    }

    /// Cell-mesh vertex values of `u₁(x, ·)`.
    pub fn u1_on_cell(&self, x: [f64; 2]) -> Vec<f64> {
        let (u0, g) = self.limit_value(x);
        (0..self.chi_cell[0].len())
            .map(|v| {
                let mut s = -g[0] * self.chi_cell[0][v] - g[1] * self.chi_cell[1][v];
                if let Some(c0) = &self.chi0_cell {
                    s += self.lambda0 * u0 * c0[v];
                }
                s
            })
            .collect()
    }
}

/// View of one triangle, for reusing the gradient helpers.
struct SingleTriangle<'a>(&'a GridMesh, usize);

impl Triangulation for SingleTriangle<'_> {
    fn vertices(&self) -> &[[f64; 2]] {
        &self.0.vertices
    }
    fn triangles(&self) -> &[[usize; 3]] {
        std::slice::from_ref(&self.0.triangles[self.1])
    }
    fn areas(&self) -> &[f64] {
        std::slice::from_ref(&self.0.areas[self.1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthonormalityReport {
    pub gram: Vec<Vec<f64>>,
    pub expected: Vec<Vec<f64>>,
    /// Largest entry of `|gram − expected|` relative to the diagonal scale.
    pub max_defect: f64,
    /// Index ranges `[start, end)` of eigenvalue clusters.
    pub clusters: Vec<(usize, usize)>,
    /// For each cluster, `‖G − E‖_F / ‖E‖_F` over the cluster block.
    pub cluster_defects: Vec<f64>,
}

/// Compares `∫u₀ᵏu₀ˡ` with the regime's orthonormalization. In the pencil
/// regime the positive branch is checked; the negative branch shares its
/// eigenfunctions and the same formula with both signs flipped.
pub fn limit_orthonormality_check(sol: &LimitSolution) -> OrthonormalityReport {
    let mesh = sol.mesh();
    let n = sol.eigenfunctions.len();
    let gram: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            (0..n)
                .map(|l| weighted_product(&mesh, None, &sol.eigenfunctions[k], &sol.eigenfunctions[l]))
                .collect()
        })
        .collect();
    let expected: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            (0..n)
                .map(|l| {
                    if k != l {
                        return 0.0;
                    }
                    match sol.kind {
                        LimitKind::Positive => 1.0 / sol.scalar,
                        LimitKind::Negative => -1.0 / sol.scalar,
                        LimitKind::Pencil => {
                            2.0 / (sol.scalar * (sol.eigenvalues[k] + sol.eigenvalues[l]))
                        }
                    }
                })
                .collect()
        })
        .collect();
    let mut max_defect: f64 = 0.0;
    for k in 0..n {
        for l in 0..n {
            let scale = expected[k][k].abs().max(expected[l][l].abs());
            max_defect = max_defect.max((gram[k][l] - expected[k][l]).abs() / scale);
        }
    }
    let mut ranges = Vec::new();
    let mut k = 0;
    while k < n {
        let mut end = k + 1;
        while end < n && (sol.mu[end] - sol.mu[k]).abs() <= CLUSTER_TOL * sol.mu[k].abs() {
            end += 1;
        }
        if end - k > 1 {
            ranges.push((k, end));
        }
        k = end;
    }
    let cluster_defects = ranges
        .iter()
        .map(|&(a, b)| {
            let (mut num, mut den) = (0.0, 0.0);
            for k in a..b {
                for l in a..b {
                    num += (gram[k][l] - expected[k][l]).powi(2);
                    den += expected[k][l].powi(2);
                }
            }
            (num / den).sqrt()
        })
        .collect();
    OrthonormalityReport {
        gram,
        expected,
        max_defect,
        clusters: ranges,
        cluster_defects,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::materials::IDENTITY;
    use std::f64::consts::PI;

    #[test]
    fn laplacian_first_eigenvalue() {
        let sol = limit_positive(&IDENTITY, 1.0, 1, 32).unwrap();
        let want = 2.0 * PI * PI;
        assert!((sol.eigenvalues[0] - want).abs() < 0.01 * want);
    }

    #[test]
    fn negative_limit_is_sign_flipped() {
        let sol = limit_negative(&IDENTITY, -1.0, 3, 16).unwrap();
        assert!(sol.eigenvalues.iter().all(|&x| x < 0.0));
        assert!(sol.eigenvalues[0] > sol.eigenvalues[1]);
    }

    #[test]
    fn pencil_orthonormalization() {
        // One-way diagonals split the continuum pair μ₂ = μ₃.
        let sol = limit_pencil(&IDENTITY, 0.5, 3, 16).unwrap();
        assert!(sol.clustered.iter().all(|c| !c));
        assert!(sol.mu[2] - sol.mu[1] < 0.02 * sol.mu[1]);
        let rep = limit_orthonormality_check(&sol);
        assert!(rep.clusters.is_empty());
        assert!(rep.max_defect < 1e-10, "{}", rep.max_defect);
    }

    #[test]
    fn cluster_flags() {
        assert_eq!(clusters(&[1.0, 2.0, 2.0 + 1e-12, 3.0]), vec![false, true, true, false]);
    }
}
