//! Piecewise-constant coefficient tensors `a(y)` and sign-changing
//! densities `ρ(y)` on the unit cell.
//!
//! Presets are evaluated once per square of the cell pattern, so both
//! triangles of a square carry the same value and the field on a domain mesh
//! is an exact periodic copy of the field on the cell mesh.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CellMesh, CellPatterned, DomainMesh, Triangulation};

pub type Tensor2 = [[f64; 2]; 2];

pub const IDENTITY: Tensor2 = [[1.0, 0.0], [0.0, 1.0]];

/// Eigenvalues of a symmetric 2×2 tensor, ascending.
pub fn tensor_eigenvalues(t: &Tensor2) -> [f64; 2] {
    let mean = 0.5 * (t[0][0] + t[1][1]);
    let half_diff = 0.5 * (t[0][0] - t[1][1]);
    let r = half_diff.hypot(t[0][1]);
    [mean - r, mean + r]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientField {
    pub preset: String,
    pub tensors: Vec<Tensor2>,
    /// Smallest eigenvalue over all elements.
    pub alpha: f64,
}

impl CoefficientField {
    pub fn from_tensors(preset: impl Into<String>, tensors: Vec<Tensor2>) -> Result<Self> {
        let mut alpha = f64::INFINITY;
        for (e, t) in tensors.iter().enumerate() {
            if t[0][1] != t[1][0] {
                return Err(Error::Material(format!("tensor of element {e} is not symmetric")));
            }
            if !t.iter().flatten().all(|x| x.is_finite()) {
                return Err(Error::Material(format!("tensor of element {e} is not finite")));
            }
            alpha = alpha.min(tensor_eigenvalues(t)[0]);
        }
        if tensors.is_empty() {
            return Err(Error::Material("empty coefficient field".into()));
        }
        if alpha <= 0.0 {
            return Err(Error::Material(format!("coefficients not elliptic (alpha = {alpha:e})")));
        }
        Ok(Self {
            preset: preset.into(),
            tensors,
            alpha,
        })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Multiplies every element tensor by a positive element weight.
    pub fn weighted(&self, weights: &[f64], preset: &str) -> Result<Self> {
        check_len(weights.len(), self.len())?;
        let tensors = self
            .tensors
            .iter()
            .zip(weights)
            .map(|(t, &w)| t.map(|row| row.map(|x| w * x)))
            .collect();
        Self::from_tensors(preset, tensors)
    }

    /// Copies cell element values onto a domain mesh.
    pub fn on_domain(&self, domain: &DomainMesh, cell: &CellMesh) -> Result<Self> {
        check_len(self.len(), cell.num_triangles())?;
        let map = domain.cell_triangle_map(cell)?;
        Ok(Self {
            preset: self.preset.clone(),
            tensors: map.iter().map(|&t| self.tensors[t]).collect(),
            alpha: self.alpha,
        })
    }

    /// `∫ a_ij` over the mesh.
    pub fn integral<M: Triangulation + ?Sized>(&self, mesh: &M) -> Result<Tensor2> {
        check_len(self.len(), mesh.num_triangles())?;
        let mut out = [[0.0; 2]; 2];
        for (t, &area) in self.tensors.iter().zip(mesh.areas()) {
            for i in 0..2 {
                for j in 0..2 {
                    out[i][j] += area * t[i][j];
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityField {
    pub preset: String,
    pub values: Vec<f64>,
    /// `∫ ρ` over the mesh.
    pub average: f64,
    pub positive_area: f64,
    pub negative_area: f64,
}

impl DensityField {
    pub fn from_values<M: Triangulation + ?Sized>(
        preset: impl Into<String>,
        values: Vec<f64>,
        mesh: &M,
    ) -> Result<Self> {
        check_len(values.len(), mesh.num_triangles())?;
        if let Some(e) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Material(format!("density of element {e} is not finite")));
        }
        let (mut pos, mut neg, mut int_pos, mut int_neg) = (0.0, 0.0, 0.0, 0.0);
        for (&v, &a) in values.iter().zip(mesh.areas()) {
            if v > 0.0 {
                pos += a;
                int_pos += v * a;
            } else if v < 0.0 {
                neg += a;
                int_neg += v * a;
            }
        }
        Ok(Self {
            preset: preset.into(),
            values,
            average: int_pos + int_neg,
            positive_area: pos,
            negative_area: neg,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scaled<M: Triangulation + ?Sized>(&self, c: f64, mesh: &M) -> Result<Self> {
        Self::from_values(
            self.preset.clone(),
            self.values.iter().map(|v| c * v).collect(),
            mesh,
        )
    }

    pub fn negated<M: Triangulation + ?Sized>(&self, mesh: &M) -> Result<Self> {
        self.scaled(-1.0, mesh)
    }

    pub fn weighted<M: Triangulation + ?Sized>(&self, weights: &[f64], mesh: &M, preset: &str) -> Result<Self> {
        check_len(weights.len(), self.len())?;
        Self::from_values(
            preset,
            self.values.iter().zip(weights).map(|(v, w)| v * w).collect(),
            mesh,
        )
    }

    pub fn on_domain(&self, domain: &DomainMesh, cell: &CellMesh) -> Result<Self> {
        check_len(self.len(), cell.num_triangles())?;
        let map = domain.cell_triangle_map(cell)?;
        Self::from_values(
            self.preset.clone(),
            map.iter().map(|&t| self.values[t]).collect(),
            domain,
        )
    }
}

fn check_len(got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Dimension(format!(
            "field has {got} elements, mesh has {want}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientPreset {
    Identity,
    Layered,
}

impl CoefficientPreset {
    pub fn name(self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::Layered => "layered",
        }
    }
}

impl std::str::FromStr for CoefficientPreset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Self::Identity),
            "layered" => Ok(Self::Layered),
            other => Err(Error::Material(format!("unknown coefficient preset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityCase {
    PositiveAvg,
    ZeroAvg,
    NegativeAvg,
}

impl DensityCase {
    pub fn name(self) -> &'static str {
        match self {
            Self::PositiveAvg => "positive_avg",
            Self::ZeroAvg => "zero_avg",
            Self::NegativeAvg => "negative_avg",
        }
    }

    /// `(left, right)` values on `{y₁ < 1/2}` and `{y₁ ≥ 1/2}`.
    pub fn halves(self) -> (f64, f64) {
        match self {
            Self::PositiveAvg => (2.0, -1.0),
            Self::ZeroAvg => (1.0, -1.0),
            Self::NegativeAvg => (-2.0, 1.0),
        }
    }
}

impl std::str::FromStr for DensityCase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "positive_avg" => Ok(Self::PositiveAvg),
            "zero_avg" => Ok(Self::ZeroAvg),
            "negative_avg" => Ok(Self::NegativeAvg),
            other => Err(Error::Material(format!("unknown density case `{other}`"))),
        }
    }
}

/// Local `y`-coordinate of the centre of a pattern square.
fn square_center<M: CellPatterned + ?Sized>(mesh: &M, t: usize) -> [f64; 2] {
    let s = mesh.pattern_resolution() as f64;
    let [i, j] = mesh.pattern_square(t);
    [(i as f64 + 0.5) / s, (j as f64 + 0.5) / s]
}

pub fn preset_coefficients<M: CellPatterned + ?Sized>(
    preset: CoefficientPreset,
    mesh: &M,
) -> Result<CoefficientField> {
    let tensors = (0..mesh.num_triangles())
        .map(|t| match preset {
            CoefficientPreset::Identity => IDENTITY,
            CoefficientPreset::Layered => {
                let c = 2.0 + (2.0 * PI * square_center(mesh, t)[0]).cos();
                [[c, 0.0], [0.0, c]]
            }
        })
        .collect();
    CoefficientField::from_tensors(preset.name(), tensors)
}

pub fn preset_density<M: CellPatterned + ?Sized>(case: DensityCase, mesh: &M) -> Result<DensityField> {
    if mesh.pattern_resolution() % 2 != 0 {
        return Err(Error::Material(format!(
            "triangles straddle y1 = 1/2 at odd resolution {}",
            mesh.pattern_resolution()
        )));
    }
    let (left, right) = case.halves();
    let values = (0..mesh.num_triangles())
        .map(|t| if square_center(mesh, t)[0] < 0.5 { left } else { right })
        .collect();
    DensityField::from_values(case.name(), values, mesh)
}

/// Areas of `{ρ > 0}` and `{ρ < 0}`; errors when either is empty.
pub fn validate_indefinite(d: &DensityField) -> Result<(f64, f64)> {
    if d.positive_area <= 0.0 || d.negative_area <= 0.0 {
        return Err(Error::Material(format!(
            "density does not change sign (positive area {}, negative area {})",
            d.positive_area, d.negative_area
        )));
    }
    Ok((d.positive_area, d.negative_area))
}

/// Reads `elem_index value` lines.
pub fn density_from_table<M: Triangulation + ?Sized>(text: &str, mesh: &M) -> Result<DensityField> {
    let rows = parse_table(text, mesh.num_triangles(), &[1])?;
    DensityField::from_values("table", rows.into_iter().map(|r| r[0]).collect(), mesh)
}

/// Reads `elem_index a` (isotropic) or `elem_index a11 a12 a22` lines.
pub fn coefficients_from_table<M: Triangulation + ?Sized>(text: &str, mesh: &M) -> Result<CoefficientField> {
    let rows = parse_table(text, mesh.num_triangles(), &[1, 3])?;
    let tensors = rows
        .into_iter()
        .map(|r| match r.len() {
            1 => [[r[0], 0.0], [0.0, r[0]]],
            _ => [[r[0], r[1]], [r[1], r[2]]],
        })
        .collect();
    CoefficientField::from_tensors("table", tensors)
}

fn parse_table(text: &str, elements: usize, widths: &[usize]) -> Result<Vec<Vec<f64>>> {
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; elements];
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || Error::Parse(format!("line {}: `{line}`", ln + 1));
        let mut parts = line.split_whitespace();
        let idx: usize = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let vals: Vec<f64> = parts.map(|p| p.parse().map_err(|_| bad())).collect::<Result<_>>()?;
        if !widths.contains(&vals.len()) {
            return Err(bad());
        }
        let slot = rows.get_mut(idx).ok_or_else(|| {
            Error::Parse(format!("line {}: element {idx} out of range", ln + 1))
        })?;
        if slot.replace(vals).is_some() {
            return Err(Error::Parse(format!("line {}: element {idx} given twice", ln + 1)));
        }
    }
    rows.into_iter()
        .enumerate()
        .map(|(e, r)| r.ok_or_else(|| Error::Parse(format!("element {e} missing from table"))))
        .collect()
}
