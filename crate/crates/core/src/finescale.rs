//! The ε-problem on `Ω^ε`, extension of its eigenfunctions across the holes
//! and two-scale pairings against oscillating test functions.

use serde::{Deserialize, Serialize};

use crate::assembly::{
    assemble_stiffness, assemble_weighted_mass, element_stiffness, field_gradients, weighted_product,
    DofMap,
};
use crate::error::{Error, Result};
use crate::geometry::{CellMesh, DomainMesh, GridMesh, Triangulation};
use crate::linalg::{SkylineCholesky, SymBuilder};
use crate::materials::{CoefficientField, DensityField, IDENTITY};
use crate::pencil::{solve_indefinite_pencil, Normalization, TwoSidedSpectrum};

/// Which orthonormalization the eigenvectors follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormTag {
    /// `∫ρ^ε u^k u^l = ±δ_kl` for the original density.
    Signed,
    /// `∫ρ̃^ε v^k v^l = −δ_kl` on the negative side of the weighted problem.
    WeightedSigned,
    /// `∫ρ^ε u^k u^l = ±ε δ_kl`.
    EpsScaled,
}

impl NormTag {
    pub fn normalization(self, eps: f64) -> Normalization {
        match self {
            Self::Signed | Self::WeightedSigned => Normalization::BSigned,
            Self::EpsScaled => Normalization::BScaled { eps },
        }
    }

    /// `|∫ρ u²|` the tag prescribes.
    pub fn magnitude(self, eps: f64) -> f64 {
        match self {
            Self::EpsScaled => eps,
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsSolution {
    pub n: usize,
    pub eps: f64,
    pub tag: NormTag,
    pub spectrum: TwoSidedSpectrum,
    pub dofmap: DofMap,
}

impl EpsSolution {
    /// Vertex values on `Ω^ε` of the `k`-th (0-based) eigenvector.
    pub fn field(&self, positive: bool, k: usize) -> Vec<f64> {
        let side = if positive {
            &self.spectrum.positive
        } else {
            &self.spectrum.negative
        };
        self.dofmap.expand(&side[k].vector)
    }

    pub fn lambda(&self, positive: bool, k: usize) -> f64 {
        if positive {
            self.spectrum.positive[k].lambda
        } else {
            self.spectrum.negative[k].lambda
        }
    }

    /// Largest deviation of `∫ρ u^k u^l` from the prescribed value over both
    /// sides, divided by the tag magnitude. Uses direct quadrature rather
    /// than the assembled matrix.
    pub fn normalization_defect(&self, mesh: &DomainMesh, density: &DensityField) -> f64 {
        let scale = self.tag.magnitude(self.eps);
        let mut worst: f64 = 0.0;
        for (positive, count) in [(true, self.spectrum.positive.len()), (false, self.spectrum.negative.len())] {
            let sign = if positive { 1.0 } else { -1.0 };
            let fields: Vec<Vec<f64>> = (0..count).map(|k| self.field(positive, k)).collect();
            for k in 0..count {
                for l in 0..count {
                    let g = weighted_product(mesh, Some(&density.values), &fields[k], &fields[l]);
                    let want = if k == l { sign * scale } else { 0.0 };
                    worst = worst.max((g - want).abs() / scale);
                }
            }
        }
        worst
    }
}

/// Both signed sequences of the ε-problem with Dirichlet data on `∂Ω` and
/// the natural condition on the hole boundaries.
pub fn solve_eps_spectrum(
    mesh: &DomainMesh,
    coeff: &CoefficientField,
    density: &DensityField,
    count_pos: usize,
    count_neg: usize,
    tag: NormTag,
) -> Result<EpsSolution> {
    let dofmap = DofMap::dirichlet(mesh.num_vertices(), &mesh.dirichlet_boundary);
    let k = assemble_stiffness(mesh, coeff, &dofmap)?;
    let b = assemble_weighted_mass(mesh, density, &dofmap)?;
    let mut spectrum = solve_indefinite_pencil(&k.matrix, &b.matrix, count_pos, count_neg)?;
    let eps = mesh.eps();
    spectrum.renormalize(&b.matrix, tag.normalization(eps));
    Ok(EpsSolution {
        n: mesh.n,
        eps,
        tag,
        spectrum,
        dofmap,
    })
}

/// Fills the vertices marked `None` with the discrete harmonic extension
/// (identity-coefficient P1 Laplacian) of the known values.
pub fn discrete_harmonic_fill(grid: &GridMesh, known: &[Option<f64>]) -> Result<Vec<f64>> {
    let nv = grid.num_vertices();
    if known.len() != nv {
        return Err(Error::Dimension(format!("{} values for {nv} vertices", known.len())));
    }
    let mut index = vec![None; nv];
    let mut unknowns = 0;
    for (v, k) in known.iter().enumerate() {
        if k.is_none() {
            index[v] = Some(unknowns);
            unknowns += 1;
        }
    }
    let mut out: Vec<f64> = known.iter().map(|k| k.unwrap_or(0.0)).collect();
    if unknowns == 0 {
        return Ok(out);
    }
    let grads = crate::assembly::element_gradients(grid);
    let mut kb = SymBuilder::new(unknowns);
    let mut rhs = vec![0.0; unknowns];
    for (e, t) in grid.triangles.iter().enumerate() {
        if t.iter().all(|&v| index[v].is_none()) {
            continue;
        }
        let ke = element_stiffness(&grads[e], grid.areas[e], &IDENTITY);
        for i in 0..3 {
            let Some(di) = index[t[i]] else { continue };
            for j in 0..3 {
                match index[t[j]] {
                    Some(dj) if dj >= di => kb.add(di, dj, ke[i][j]),
                    Some(_) => {}
                    None => rhs[di] -= ke[i][j] * out[t[j]],
                }
            }
        }
    }
    let chol = SkylineCholesky::factor(&kb.build())?;
    let x = chol.solve(&rhs);
    for (v, d) in index.iter().enumerate() {
        if let Some(d) = d {
            out[v] = x[*d];
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extension {
    /// Vertex values on the hole-filled grid of `Ω`.
    pub values: Vec<f64>,
    /// `‖D(Pu)‖_{L²(Ω)} / ‖Du‖_{L²(Ω^ε)}`.
    pub gradient_ratio: f64,
}

pub fn harmonic_extension(mesh: &DomainMesh, u: &[f64]) -> Result<Extension> {
    if u.len() != mesh.num_vertices() {
        return Err(Error::Dimension(format!(
            "{} values for {} vertices",
            u.len(),
            mesh.num_vertices()
        )));
    }
    let filled = mesh.filled();
    let mut known = vec![None; filled.num_vertices()];
    for (v, f) in mesh.filled_index().into_iter().enumerate() {
        known[f] = Some(u[v]);
    }
    let values = discrete_harmonic_fill(&filled, &known)?;
    let inner = gradient_norm(mesh, u);
    let outer = gradient_norm(&filled, &values);
    let gradient_ratio = if inner > 0.0 { outer / inner } else { 1.0 };
    Ok(Extension {
        values,
        gradient_ratio,
    })
}

/// `‖Du‖_{L²}` of a P1 field.
pub fn gradient_norm<M: Triangulation + ?Sized>(mesh: &M, u: &[f64]) -> f64 {
    field_gradients(mesh, u)
        .iter()
        .zip(mesh.areas())
        .map(|(g, &a)| a * (g[0] * g[0] + g[1] * g[1]))
        .sum::<f64>()
        .sqrt()
}

/// A `Y`-periodic function stored on the hole-filled `m × m` cell grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PeriodicField {
    /// P1 vertex values on the `(m+1)²` grid points.
    Nodal { resolution: usize, values: Vec<f64> },
    /// One constant per triangle of the `2m²` filled-cell triangles.
    Element { resolution: usize, values: Vec<f64> },
}

impl PeriodicField {
    pub fn from_fn(resolution: usize, f: impl Fn([f64; 2]) -> f64) -> Self {
        let grid = GridMesh::unit_square(resolution);
        Self::Nodal {
            resolution,
            values: grid.vertices.iter().map(|&p| f(p)).collect(),
        }
    }

    /// `ρ χ_{Y*}`: the density on the solid part, zero in the hole.
    pub fn density_on_solid(cell: &CellMesh, density: &DensityField) -> Result<Self> {
        if density.len() != cell.num_triangles() {
            return Err(Error::Dimension("density does not match the cell mesh".into()));
        }
        let m = cell.resolution();
        let table = cell.triangle_of_square();
        let values = (0..2 * m * m)
            .map(|slot| table[slot].map_or(0.0, |t| density.values[t]))
            .collect();
        Ok(Self::Element { resolution: m, values })
    }

    /// A cell-mesh vertex field extended harmonically into the hole.
    pub fn extended_from_cell(cell: &CellMesh, values: &[f64]) -> Result<Self> {
        let filled = cell.filled();
        let mut known = vec![None; filled.num_vertices()];
        for (v, &[i, j]) in cell.grid.grid_of_vertex.iter().enumerate() {
            known[filled.vertex_at(i, j).expect("full grid")] = Some(values[v]);
        }
        Ok(Self::Nodal {
            resolution: cell.resolution(),
            values: discrete_harmonic_fill(&filled, &known)?,
        })
    }

    pub fn resolution(&self) -> usize {
        match self {
            Self::Nodal { resolution, .. } | Self::Element { resolution, .. } => *resolution,
        }
    }

    /// `∫_Y` of the field.
    pub fn mean(&self) -> f64 {
        let grid = GridMesh::unit_square(self.resolution());
        match self {
            Self::Nodal { values, .. } => crate::assembly::integrate(&grid, values),
            Self::Element { values, .. } => values.iter().zip(&grid.areas).map(|(v, a)| v * a).sum(),
        }
    }
}

/// `∫ λ_i λ_j λ_k` over a triangle of area `area`.
fn triple(i: usize, j: usize, k: usize, area: f64) -> f64 {
    if i == j && j == k {
        area / 10.0
    } else if i == j || j == k || i == k {
        area / 30.0
    } else {
        area / 60.0
    }
}

/// `∫_Ω u(x) φ₀(x) φ₁(x/ε) dx` with exact quadrature of the P1 product on
/// the hole-filled grid.
///
/// `u` and `phi0` are vertex values on `filled`; `φ₁` has one period per
/// `filled.size / n` grid squares.
pub fn two_scale_pairing(filled: &GridMesh, u: &[f64], phi0: &[f64], phi1: &PeriodicField, n: usize) -> Result<f64> {
    let s = phi1.resolution();
    if filled.size != n * s {
        return Err(Error::Pairing(format!(
            "grid of size {} cannot carry {n} periods of a resolution-{s} cell field",
            filled.size
        )));
    }
    if u.len() != filled.num_vertices() || phi0.len() != filled.num_vertices() {
        return Err(Error::Dimension("pairing inputs do not match the filled grid".into()));
    }
    let mut total = 0.0;
    for (e, (t, &area)) in filled.triangles.iter().zip(&filled.areas).enumerate() {
        let [si, sj] = filled.square_of_triangle[e];
        let (ci, cj) = (si % s, sj % s);
        match phi1 {
            PeriodicField::Element { values, .. } => {
                let w = values[2 * (cj * s + ci) + e % 2];
                if w == 0.0 {
                    continue;
                }
                let su: f64 = t.iter().map(|&v| u[v]).sum();
                let sp: f64 = t.iter().map(|&v| phi0[v]).sum();
                let d: f64 = t.iter().map(|&v| u[v] * phi0[v]).sum();
                total += w * area / 12.0 * (d + su * sp);
            }
            PeriodicField::Nodal { values, .. } => {
                let np = s + 1;
                let local = |v: usize| {
                    let [gi, gj] = filled.grid_of_vertex[v];
                    // Vertices on the upper/right edge of the period map to
                    // the cell's upper/right edge, not its origin.
                    let li = gi - si + ci;
                    let lj = gj - sj + cj;
                    values[lj * np + li]
                };
                let p1 = [local(t[0]), local(t[1]), local(t[2])];
                for i in 0..3 {
                    for j in 0..3 {
                        for k in 0..3 {
                            total += u[t[i]] * phi0[t[j]] * p1[k] * triple(i, j, k, area);
                        }
                    }
                }
            }
        }
    }
    Ok(total)
}

/// `(1/ε) ∫ u φ₀ ψ₁(x/ε)` for a mean-zero `ψ₁`.
pub fn scaled_pairing(filled: &GridMesh, u: &[f64], psi0: &[f64], psi1: &PeriodicField, n: usize) -> Result<f64> {
    let mean = psi1.mean();
    if mean.abs() > 1e-12 {
        return Err(Error::Pairing(format!("cell factor has nonzero mean {mean:e}")));
    }
    Ok(n as f64 * two_scale_pairing(filled, u, psi0, psi1, n)?)
}
