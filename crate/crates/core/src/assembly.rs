//! P1 Galerkin assembly of stiffness, weighted-mass and mass forms and of the
//! cell-problem right-hand sides, on periodic or Dirichlet-constrained dofs.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CellMesh, Triangulation};
use crate::linalg::{dot, SkylineCholesky, SparseSym, SymBuilder};
use crate::materials::{CoefficientField, DensityField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    Free,
    PeriodicReplica,
    Dirichlet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DofMap {
    pub vertex_dof: Vec<Option<usize>>,
    pub constraint: Vec<Constraint>,
    pub num_dofs: usize,
    /// Exact `∫ φ_i` weights of the mean-zero row, when requested.
    pub mean_weights: Option<Vec<f64>>,
}

impl DofMap {
    /// One dof per vertex, no constraints.
    pub fn free(num_vertices: usize) -> Self {
        Self {
            vertex_dof: (0..num_vertices).map(Some).collect(),
            constraint: vec![Constraint::Free; num_vertices],
            num_dofs: num_vertices,
            mean_weights: None,
        }
    }

    /// Eliminates the listed vertices; the rest are numbered in vertex order.
    pub fn dirichlet(num_vertices: usize, boundary: &[usize]) -> Self {
        let mut constraint = vec![Constraint::Free; num_vertices];
        for &v in boundary {
            constraint[v] = Constraint::Dirichlet;
        }
        let mut next = 0;
        let vertex_dof = constraint
            .iter()
            .map(|c| match c {
                Constraint::Dirichlet => None,
                _ => {
                    next += 1;
                    Some(next - 1)
                }
            })
            .collect();
        Self {
            vertex_dof,
            constraint,
            num_dofs: next,
            mean_weights: None,
        }
    }

    /// Replica vertices on the right/top faces share their partner's dof.
    pub fn periodic(mesh: &CellMesh, mean_zero: bool) -> Self {
        let nv = mesh.num_vertices();
        let master = mesh.periodic_master();
        let mut constraint = vec![Constraint::Free; nv];
        let mut vertex_dof = vec![None; nv];
        let mut next = 0;
        for v in 0..nv {
            if master[v] == v {
                vertex_dof[v] = Some(next);
                next += 1;
            } else {
                constraint[v] = Constraint::PeriodicReplica;
            }
        }
        for v in 0..nv {
            if master[v] != v {
                vertex_dof[v] = vertex_dof[master[v]];
            }
        }
        let mut map = Self {
            vertex_dof,
            constraint,
            num_dofs: next,
            mean_weights: None,
        };
        if mean_zero {
            map.mean_weights = Some(map.integration_weights(mesh));
        }
        map
    }

    /// `∫ φ_i` for every dof (lumped row sums of the exact mass matrix).
    pub fn integration_weights<M: Triangulation + ?Sized>(&self, mesh: &M) -> Vec<f64> {
        let mut w = vec![0.0; self.num_dofs];
        for (tri, &area) in mesh.triangles().iter().zip(mesh.areas()) {
            for &v in tri {
                if let Some(d) = self.vertex_dof[v] {
                    w[d] += area / 3.0;
                }
            }
        }
        w
    }

    /// Vertex values of a dof vector; eliminated vertices get zero.
    pub fn expand(&self, u: &[f64]) -> Vec<f64> {
        self.vertex_dof
            .iter()
            .map(|d| d.map_or(0.0, |d| u[d]))
            .collect()
    }

    /// Dof vector read off vertex values (last writer wins on replicas).
    pub fn restrict(&self, values: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.num_dofs];
        for (v, d) in self.vertex_dof.iter().enumerate() {
            if let Some(d) = d {
                u[*d] = values[v];
            }
        }
        u
    }

    fn check<M: Triangulation + ?Sized>(&self, mesh: &M) -> Result<()> {
        if self.vertex_dof.len() != mesh.num_vertices() {
            return Err(Error::Dimension(format!(
                "dof map covers {} vertices, mesh has {}",
                self.vertex_dof.len(),
                mesh.num_vertices()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorKind {
    Stiffness,
    WeightedMass,
    PlainMass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricOperator {
    pub matrix: SparseSym,
    pub kind: OperatorKind,
    pub dofmap: DofMap,
}

impl SymmetricOperator {
    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.matrix.matvec(x)
    }

    pub fn form(&self, x: &[f64], y: &[f64]) -> f64 {
        self.matrix.form(x, y)
    }

    pub fn write_coo<W: Write>(&self, w: W) -> Result<()> {
        self.matrix.write_coo(w)
    }

    pub fn read_matrix<R: BufRead>(r: R) -> Result<SparseSym> {
        SparseSym::read_coo(r)
    }

    /// Factors the bordered mean-zero system once for repeated solves.
    pub fn mean_zero_solver(&self) -> Result<MeanZeroSolver> {
        let w = self
            .dofmap
            .mean_weights
            .clone()
            .ok_or_else(|| Error::Cell("operator has no mean-zero constraint".into()))?;
        let n = self.dim();
        let pin = 0;
        let scale = self.matrix.get(pin, pin).abs().max(1.0);
        let mut b = SymBuilder::new(n);
        for (i, j, v) in self.matrix.iter() {
            if i <= j {
                b.add(i, j, v);
            }
        }
        b.add(pin, pin, scale);
        let chol = SkylineCholesky::factor(&b.build())
            .map_err(|e| Error::Cell(format!("singular cell system: {e}")))?;
        Ok(MeanZeroSolver { chol, weights: w })
    }

    pub fn solve_mean_zero(&self, f: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.mean_zero_solver()?.solve(f)
    }
}

/// Solves `K u + m w = f`, `wᵀu = 0` for a periodic stiffness `K` whose
/// kernel is the constants.
///
/// One dof is pinned, which leaves the compatible part of `f` unchanged,
/// and the constant is then projected out along `w`. Both steps are exact,
/// so the result is the solution of the bordered multiplier system.
#[derive(Debug, Clone)]
pub struct MeanZeroSolver {
    chol: SkylineCholesky,
    weights: Vec<f64>,
}

impl MeanZeroSolver {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Returns `(u, m)`.
    pub fn solve(&self, f: &[f64]) -> Result<(Vec<f64>, f64)> {
        let w = &self.weights;
        if f.len() != w.len() {
            return Err(Error::Dimension(format!(
                "rhs has {} entries, operator {}",
                f.len(),
                w.len()
            )));
        }
        let multiplier = f.iter().sum::<f64>() / w.iter().sum::<f64>();
        let g: Vec<f64> = f.iter().zip(w).map(|(fi, wi)| fi - multiplier * wi).collect();
        let mut u = self.chol.solve(&g);
        let shift = dot(w, &u) / w.iter().sum::<f64>();
        u.iter_mut().for_each(|x| *x -= shift);
        Ok((u, multiplier))
    }
}

/// Gradients of the three barycentric functions of every triangle.
pub fn element_gradients<M: Triangulation + ?Sized>(mesh: &M) -> Vec<[[f64; 2]; 3]> {
    let v = mesh.vertices();
    mesh.triangles()
        .iter()
        .zip(mesh.areas())
        .map(|(t, &area)| {
            let mut g = [[0.0; 2]; 3];
            for i in 0..3 {
                let pj = v[t[(i + 1) % 3]];
                let pk = v[t[(i + 2) % 3]];
                g[i] = [(pj[1] - pk[1]) / (2.0 * area), (pk[0] - pj[0]) / (2.0 * area)];
            }
            g
        })
        .collect()
}

/// Element-wise gradient of a P1 field given by vertex values.
pub fn field_gradients<M: Triangulation + ?Sized>(mesh: &M, values: &[f64]) -> Vec<[f64; 2]> {
    element_gradients(mesh)
        .iter()
        .zip(mesh.triangles())
        .map(|(g, t)| {
            let mut d = [0.0; 2];
            for k in 0..3 {
                d[0] += values[t[k]] * g[k][0];
                d[1] += values[t[k]] * g[k][1];
            }
            d
        })
        .collect()
}

/// `∫ u` for a P1 field given by vertex values.
pub fn integrate<M: Triangulation + ?Sized>(mesh: &M, values: &[f64]) -> f64 {
    mesh.triangles()
        .iter()
        .zip(mesh.areas())
        .map(|(t, &a)| a / 3.0 * (values[t[0]] + values[t[1]] + values[t[2]]))
        .sum()
}

/// `∫ w u v` with piecewise-constant `w` and P1 fields `u`, `v`.
pub fn weighted_product<M: Triangulation + ?Sized>(mesh: &M, weight: Option<&[f64]>, u: &[f64], v: &[f64]) -> f64 {
    mesh.triangles()
        .iter()
        .zip(mesh.areas())
        .enumerate()
        .map(|(e, (t, &a))| {
            let su: f64 = t.iter().map(|&i| u[i]).sum();
            let sv: f64 = t.iter().map(|&i| v[i]).sum();
            let diag: f64 = t.iter().map(|&i| u[i] * v[i]).sum();
            weight.map_or(1.0, |w| w[e]) * a / 12.0 * (diag + su * sv)
        })
        .sum()
}

/// Element stiffness `A gᵢᵀ a gⱼ`.
pub fn element_stiffness(grads: &[[f64; 2]; 3], area: f64, a: &[[f64; 2]; 2]) -> [[f64; 3]; 3] {
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        let ag = [
            a[0][0] * grads[i][0] + a[0][1] * grads[i][1],
            a[1][0] * grads[i][0] + a[1][1] * grads[i][1],
        ];
        for j in 0..3 {
            k[j][i] = area * (ag[0] * grads[j][0] + ag[1] * grads[j][1]);
        }
    }
    k
}

pub fn element_mass(area: f64, weight: f64) -> [[f64; 3]; 3] {
    let d = weight * area / 6.0;
    let o = weight * area / 12.0;
    [[d, o, o], [o, d, o], [o, o, d]]
}

fn scatter<M: Triangulation + ?Sized>(
    mesh: &M,
    dofmap: &DofMap,
    mut element: impl FnMut(usize) -> [[f64; 3]; 3],
) -> SparseSym {
    let mut b = SymBuilder::new(dofmap.num_dofs);
    for (e, t) in mesh.triangles().iter().enumerate() {
        let ke = element(e);
        for i in 0..3 {
            let Some(di) = dofmap.vertex_dof[t[i]] else { continue };
            for j in i..3 {
                let Some(dj) = dofmap.vertex_dof[t[j]] else { continue };
                // Off-diagonal pairs that collapse to one dof contribute twice.
                let v = if i != j && di == dj { 2.0 * ke[i][j] } else { ke[i][j] };
                b.add(di, dj, v);
            }
        }
    }
    b.build()
}

pub fn assemble_stiffness<M: Triangulation + ?Sized>(
    mesh: &M,
    coeff: &CoefficientField,
    dofmap: &DofMap,
) -> Result<SymmetricOperator> {
    dofmap.check(mesh)?;
    if coeff.len() != mesh.num_triangles() {
        return Err(Error::Dimension(format!(
            "coefficient field has {} elements, mesh has {}",
            coeff.len(),
            mesh.num_triangles()
        )));
    }
    let grads = element_gradients(mesh);
    let areas = mesh.areas();
    let matrix = scatter(mesh, dofmap, |e| element_stiffness(&grads[e], areas[e], &coeff.tensors[e]));
    Ok(SymmetricOperator {
        matrix,
        kind: OperatorKind::Stiffness,
        dofmap: dofmap.clone(),
    })
}

pub fn assemble_weighted_mass<M: Triangulation + ?Sized>(
    mesh: &M,
    density: &DensityField,
    dofmap: &DofMap,
) -> Result<SymmetricOperator> {
    dofmap.check(mesh)?;
    if density.len() != mesh.num_triangles() {
        return Err(Error::Dimension(format!(
            "density has {} elements, mesh has {}",
            density.len(),
            mesh.num_triangles()
        )));
    }
    let areas = mesh.areas();
    let matrix = scatter(mesh, dofmap, |e| element_mass(areas[e], density.values[e]));
    Ok(SymmetricOperator {
        matrix,
        kind: OperatorKind::WeightedMass,
        dofmap: dofmap.clone(),
    })
}

pub fn assemble_mass<M: Triangulation + ?Sized>(mesh: &M, dofmap: &DofMap) -> Result<SymmetricOperator> {
    dofmap.check(mesh)?;
    let areas = mesh.areas();
    let matrix = scatter(mesh, dofmap, |e| element_mass(areas[e], 1.0));
    Ok(SymmetricOperator {
        matrix,
        kind: OperatorKind::PlainMass,
        dofmap: dofmap.clone(),
    })
}

/// Right-hand sides `l_j(v) = Σ_k ∫ a_kj ∂_k v` and `l_0(v) = ∫ ρ v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Functionals {
    pub l: [Vec<f64>; 2],
    pub l0: Vec<f64>,
}

pub fn assemble_functionals<M: Triangulation + ?Sized>(
    mesh: &M,
    coeff: &CoefficientField,
    density: &DensityField,
    dofmap: &DofMap,
) -> Result<Functionals> {
    dofmap.check(mesh)?;
    if coeff.len() != mesh.num_triangles() || density.len() != mesh.num_triangles() {
        return Err(Error::Dimension("field sizes do not match the mesh".into()));
    }
    let n = dofmap.num_dofs;
    let mut l = [vec![0.0; n], vec![0.0; n]];
    let mut l0 = vec![0.0; n];
    let grads = element_gradients(mesh);
    for (e, (t, &area)) in mesh.triangles().iter().zip(mesh.areas()).enumerate() {
        let a = &coeff.tensors[e];
        for i in 0..3 {
            let Some(d) = dofmap.vertex_dof[t[i]] else { continue };
            for (j, lj) in l.iter_mut().enumerate() {
                lj[d] += area * (a[0][j] * grads[e][i][0] + a[1][j] * grads[e][i][1]);
            }
            l0[d] += density.values[e] * area / 3.0;
        }
    }
    Ok(Functionals { l, l0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_cell_mesh, CellGeometry, GridMesh};
    use crate::materials::{preset_coefficients, preset_density, CoefficientPreset, DensityCase};

    #[test]
    fn reference_triangle_blocks() {
        let g = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];
        let k = element_stiffness(&g, 0.5, &crate::materials::IDENTITY);
        let want = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((k[i][j] - want[i][j]).abs() < 1e-15);
            }
        }
        let m = element_mass(0.5, 1.0);
        assert_eq!(m[0][0], 2.0 / 24.0);
        assert_eq!(m[0][1], 1.0 / 24.0);
    }

    #[test]
    fn periodic_stiffness_annihilates_constants() {
        let mesh = build_cell_mesh(&CellGeometry::no_hole(8)).unwrap();
        let coeff = preset_coefficients(CoefficientPreset::Identity, &mesh).unwrap();
        let map = DofMap::periodic(&mesh, false);
        assert_eq!(map.num_dofs, 64);
        let k = assemble_stiffness(&mesh, &coeff, &map).unwrap();
        let r = k.apply(&vec![1.0; map.num_dofs]);
        assert!(r.iter().all(|x| x.abs() < 1e-13));
    }

    #[test]
    fn weighted_mass_integrates_density() {
        let mesh = build_cell_mesh(&CellGeometry::square(16)).unwrap();
        let rho = preset_density(DensityCase::PositiveAvg, &mesh).unwrap();
        let map = DofMap::periodic(&mesh, false);
        let b = assemble_weighted_mass(&mesh, &rho, &map).unwrap();
        let one = vec![1.0; map.num_dofs];
        assert!((b.form(&one, &one) - rho.average).abs() < 1e-13);
    }

    #[test]
    fn mean_zero_solve_matches_multiplier_system() {
        let mesh = build_cell_mesh(&CellGeometry::square(8)).unwrap();
        let coeff = preset_coefficients(CoefficientPreset::Layered, &mesh).unwrap();
        let map = DofMap::periodic(&mesh, true);
        let k = assemble_stiffness(&mesh, &coeff, &map).unwrap();
        let f: Vec<f64> = (0..map.num_dofs).map(|i| ((i * 7 % 11) as f64) - 5.0).collect();
        let (u, m) = k.solve_mean_zero(&f).unwrap();
        let w = map.mean_weights.as_ref().unwrap();
        assert!(dot(w, &u).abs() < 1e-13);
        let ku = k.apply(&u);
        for i in 0..u.len() {
            assert!((ku[i] + m * w[i] - f[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn dirichlet_map_drops_outer_ring() {
        let g = GridMesh::unit_square(4);
        let map = DofMap::dirichlet(g.num_vertices(), &g.outer_boundary());
        assert_eq!(map.num_dofs, 9);
    }
}
