//! Symmetric generalized eigenproblems `K u = λ B u`.
//!
//! `K` is factored as `L Lᵀ` and the pencil becomes the single symmetric
//! operator `C = L⁻¹ B L⁻ᵀ` with eigenvalues `μ = 1/λ`. Positive `μ` give
//! the positive sequence, negative `μ` the negative one; `μ = 0` is never
//! reported.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::krylov::{extreme_eigenpairs, KrylovOptions};
use crate::linalg::{
    jacobi_eigen, norm2, symmetric_eigen_ascending, SkylineCholesky, SparseSym, SymBuilder,
    SymmetricDecomposition,
};

/// Largest dimension for which `C` is formed explicitly.
pub const DENSE_LIMIT: usize = 600;

/// `|μ|` below this fraction of `max |μ|` counts as zero.
pub const ZERO_MU_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Normalization {
    /// `uᵀ B u = ±1`.
    BSigned,
    /// `uᵀ B u = ±ε`.
    BScaled { eps: f64 },
    /// `uᵀ u = 1`.
    L2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Eigenpair {
    pub lambda: f64,
    pub mu: f64,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoSidedSpectrum {
    /// `0 < λ¹ ≤ λ² ≤ …`
    pub positive: Vec<Eigenpair>,
    /// `0 > λ¹ ≥ λ² ≥ …`
    pub negative: Vec<Eigenpair>,
    pub normalization: Normalization,
}

impl TwoSidedSpectrum {
    /// Rescales every vector so that `uᵀBu` matches the tag, keeping signs.
    pub fn renormalize(&mut self, b: &SparseSym, tag: Normalization) {
        for p in self.positive.iter_mut().chain(self.negative.iter_mut()) {
            let target = match tag {
                Normalization::BSigned => 1.0,
                Normalization::BScaled { eps } => eps,
                Normalization::L2 => {
                    let n = norm2(&p.vector);
                    p.vector.iter_mut().for_each(|x| *x /= n);
                    continue;
                }
            };
            let cur = b.form(&p.vector, &p.vector).abs();
            let s = (target / cur).sqrt();
            p.vector.iter_mut().for_each(|x| *x *= s);
        }
        self.normalization = tag;
    }
}

/// First entry above `1e-8·max|x|` made positive.
pub fn fix_sign(x: &mut [f64]) {
    let big = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if let Some(first) = x.iter().find(|v| v.abs() > 1e-8 * big) {
        if *first < 0.0 {
            x.iter_mut().for_each(|v| *v = -*v);
        }
    }
}

/// Factorization of `K` seen as `L̂ L̂ᵀ`.
trait Factor {
    fn dim(&self) -> usize;
    fn lower_inv(&self, b: &[f64]) -> Vec<f64>;
    fn upper_inv(&self, y: &[f64]) -> Vec<f64>;
}

impl Factor for SkylineCholesky {
    fn dim(&self) -> usize {
        SkylineCholesky::dim(self)
    }
    fn lower_inv(&self, b: &[f64]) -> Vec<f64> {
        self.solve_lower(b)
    }
    fn upper_inv(&self, y: &[f64]) -> Vec<f64> {
        self.solve_upper(y)
    }
}

struct DenseFactor(DMatrix<f64>);

impl Factor for DenseFactor {
    fn dim(&self) -> usize {
        self.0.nrows()
    }
    fn lower_inv(&self, b: &[f64]) -> Vec<f64> {
        let x = self
            .0
            .solve_lower_triangular(&DVector::from_column_slice(b))
            .expect("nonzero diagonal");
        x.as_slice().to_vec()
    }
    fn upper_inv(&self, y: &[f64]) -> Vec<f64> {
        let x = self
            .0
            .tr_solve_lower_triangular(&DVector::from_column_slice(y))
            .expect("nonzero diagonal");
        x.as_slice().to_vec()
    }
}

fn dense_factor(k: &DMatrix<f64>) -> Result<DenseFactor> {
    let n = k.nrows();
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = k[(j, j)];
        for p in 0..j {
            d -= l[(j, p)] * l[(j, p)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j, value: d });
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = k[(i, j)];
            for p in 0..j {
                s -= l[(i, p)] * l[(j, p)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(DenseFactor(l))
}

/// Raw `(μ, y)` pairs: positive side by decreasing μ, negative side by
/// increasing μ; `y` are unit eigenvectors of `C`.
struct Extremes {
    pos: Vec<(f64, Vec<f64>)>,
    neg: Vec<(f64, Vec<f64>)>,
}

fn extremes<F: Factor>(
    factor: &F,
    apply_b: &dyn Fn(&[f64]) -> Vec<f64>,
    count_pos: usize,
    count_neg: usize,
    force_dense: bool,
) -> Result<Extremes> {
    let n = factor.dim();
    let op = |y: &[f64]| factor.lower_inv(&apply_b(&factor.upper_inv(y)));

    if force_dense || n <= DENSE_LIMIT {
        // C = L̂⁻¹ (L̂⁻¹ B)ᵀ, column by column.
        let mut y = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = factor.lower_inv(&apply_b(&e));
            e[j] = 0.0;
            y.column_mut(j).copy_from_slice(&col);
        }
        let mut c = DMatrix::zeros(n, n);
        for j in 0..n {
            let row: Vec<f64> = y.row(j).iter().copied().collect();
            c.column_mut(j).copy_from_slice(&factor.lower_inv(&row));
        }
        let (mu, vecs) = symmetric_eigen_ascending(&c);
        let scale = mu.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let tol = ZERO_MU_TOL * scale;
        let avail_pos = mu.iter().filter(|&&m| m > tol).count();
        let avail_neg = mu.iter().filter(|&&m| m < -tol).count();
        check_counts(count_pos, avail_pos, count_neg, avail_neg)?;
        let col = |i: usize| vecs.column(i).iter().copied().collect::<Vec<f64>>();
        Ok(Extremes {
            pos: (0..count_pos).map(|k| (mu[n - 1 - k], col(n - 1 - k))).collect(),
            neg: (0..count_neg).map(|k| (mu[k], col(k))).collect(),
        })
    } else {
        let res = extreme_eigenpairs(op, n, count_pos, count_neg, KrylovOptions::default())?;
        let tol = ZERO_MU_TOL * res.scale;
        let avail_pos = res.top.iter().filter(|r| r.value > tol).count();
        let avail_neg = res.bottom.iter().filter(|r| r.value < -tol).count();
        check_counts(count_pos, avail_pos, count_neg, avail_neg)?;
        Ok(Extremes {
            pos: res.top.into_iter().map(|r| (r.value, r.vector)).collect(),
            neg: res.bottom.into_iter().map(|r| (r.value, r.vector)).collect(),
        })
    }
}

fn check_counts(want_pos: usize, have_pos: usize, want_neg: usize, have_neg: usize) -> Result<()> {
    if want_pos > have_pos {
        return Err(Error::CountExceeded {
            side: "positive",
            requested: want_pos,
            available: have_pos,
        });
    }
    if want_neg > have_neg {
        return Err(Error::CountExceeded {
            side: "negative",
            requested: want_neg,
            available: have_neg,
        });
    }
    Ok(())
}

fn to_pairs<F: Factor>(factor: &F, raw: Vec<(f64, Vec<f64>)>) -> Vec<Eigenpair> {
    raw.into_iter()
        .map(|(mu, y)| {
            // uᵀBu = yᵀCy = μ, so this scaling gives uᵀBu = sign(μ).
            let s = 1.0 / mu.abs().sqrt();
            let mut u: Vec<f64> = factor.upper_inv(&y).into_iter().map(|x| s * x).collect();
            fix_sign(&mut u);
            Eigenpair {
                lambda: 1.0 / mu,
                mu,
                vector: u,
            }
        })
        .collect()
}

fn square_check(k: &SparseSym, b: &SparseSym) -> Result<()> {
    if k.dim() != b.dim() {
        return Err(Error::Dimension(format!(
            "K is {0}x{0}, B is {1}x{1}",
            k.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// `K` SPD, `B` symmetric and possibly indefinite.
pub fn solve_indefinite_pencil(
    k: &SparseSym,
    b: &SparseSym,
    count_pos: usize,
    count_neg: usize,
) -> Result<TwoSidedSpectrum> {
    square_check(k, b)?;
    let chol = SkylineCholesky::factor(k)?;
    let ex = extremes(&chol, &|x| b.matvec(x), count_pos, count_neg, false)?;
    Ok(TwoSidedSpectrum {
        positive: to_pairs(&chol, ex.pos),
        negative: to_pairs(&chol, ex.neg),
        normalization: Normalization::BSigned,
    })
}

/// Smallest `count` eigenpairs of `K u = λ B u` with both forms SPD,
/// ascending, `uᵀBu = 1`.
pub fn solve_spd_pencil(k: &SparseSym, b: &SparseSym, count: usize) -> Result<Vec<Eigenpair>> {
    square_check(k, b)?;
    SkylineCholesky::factor(b)?;
    let chol = SkylineCholesky::factor(k)?;
    let ex = extremes(&chol, &|x| b.matvec(x), count, 0, false)?;
    let pairs = to_pairs(&chol, ex.pos);
    for p in &pairs {
        let ku = k.matvec(&p.vector);
        let bu = b.matvec(&p.vector);
        let r: Vec<f64> = ku.iter().zip(&bu).map(|(x, y)| x - p.lambda * y).collect();
        if norm2(&r) > 1e-8 * norm2(&ku) {
            return Err(Error::Eigen(format!(
                "residual {:e} too large for eigenvalue {}",
                norm2(&r) / norm2(&ku),
                p.lambda
            )));
        }
    }
    Ok(pairs)
}

/// Dense variant of [`solve_indefinite_pencil`].
pub fn solve_indefinite_dense(
    k: &DMatrix<f64>,
    b: &DMatrix<f64>,
    count_pos: usize,
    count_neg: usize,
) -> Result<TwoSidedSpectrum> {
    if k.shape() != b.shape() || k.nrows() != k.ncols() {
        return Err(Error::Dimension("K and B must be square of equal size".into()));
    }
    let f = dense_factor(k)?;
    let apply = |x: &[f64]| (b * DVector::from_column_slice(x)).as_slice().to_vec();
    let ex = extremes(&f, &apply, count_pos, count_neg, true)?;
    Ok(TwoSidedSpectrum {
        positive: to_pairs(&f, ex.pos),
        negative: to_pairs(&f, ex.neg),
        normalization: Normalization::BSigned,
    })
}

/// The pencil restricted to `S = {u : 1ᵀBu = 0}`.
///
/// `S` is spanned by `P eᵢ, i ≠ p`, where `P u = u − (cᵀu / cᵀ1) 1` with
/// `c = B1` and `p` the pivot coordinate. Since `K1 = 0`, the reduced
/// stiffness is `K` with row and column `p` removed, which stays sparse and
/// is SPD whenever the kernel of `K` is exactly the constants.
#[derive(Debug, Clone)]
pub struct DeflatedPencil {
    /// Reduced stiffness, dimension `n − 1`.
    pub k: SparseSym,
    b: SparseSym,
    direction: Vec<f64>,
    total: f64,
    pub pivot: usize,
}

impl DeflatedPencil {
    pub fn dim(&self) -> usize {
        self.k.dim()
    }

    /// `B1`, the direction whose orthogonal complement is kept.
    pub fn direction(&self) -> &[f64] {
        &self.direction
    }

    /// Full-length vector `P E z`.
    pub fn lift(&self, z: &[f64]) -> Vec<f64> {
        let p = self.pivot;
        let mut u = Vec::with_capacity(z.len() + 1);
        u.extend_from_slice(&z[..p]);
        u.push(0.0);
        u.extend_from_slice(&z[p..]);
        let alpha = crate::linalg::dot(&self.direction, &u) / self.total;
        u.iter_mut().for_each(|x| *x -= alpha);
        u
    }

    /// `Eᵀ Pᵀ v` for a full-length `v`.
    fn restrict(&self, v: &[f64]) -> Vec<f64> {
        let s: f64 = v.iter().sum();
        let mut out: Vec<f64> = v.iter().zip(&self.direction).map(|(x, c)| x - c * s / self.total).collect();
        out.remove(self.pivot);
        out
    }

    /// Reduced weighted mass applied to `z`.
    pub fn apply_b(&self, z: &[f64]) -> Vec<f64> {
        self.restrict(&self.b.matvec(&self.lift(z)))
    }

    /// Dense reduced matrices `(K', B')`, for cross-checks.
    pub fn to_dense(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.dim();
        let mut b = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            b.column_mut(j).copy_from_slice(&self.apply_b(&e));
            e[j] = 0.0;
        }
        let bt = b.transpose();
        (self.k.to_dense(), (b + bt) * 0.5)
    }

    /// Solves the restricted pencil and lifts vectors to full length.
    pub fn solve(&self, count_pos: usize, count_neg: usize) -> Result<TwoSidedSpectrum> {
        let chol = SkylineCholesky::factor(&self.k)?;
        let ex = extremes(&chol, &|z| self.apply_b(z), count_pos, count_neg, false)?;
        let lift = |pairs: Vec<Eigenpair>| {
            pairs
                .into_iter()
                .map(|mut p| {
                    p.vector = self.lift(&p.vector);
                    fix_sign(&mut p.vector);
                    p
                })
                .collect()
        };
        Ok(TwoSidedSpectrum {
            positive: lift(to_pairs(&chol, ex.pos)),
            negative: lift(to_pairs(&chol, ex.neg)),
            normalization: Normalization::BSigned,
        })
    }
}

pub fn deflate_constants(k: &SparseSym, b: &SparseSym) -> Result<DeflatedPencil> {
    square_check(k, b)?;
    let n = k.dim();
    if n < 2 {
        return Err(Error::Dimension("nothing left after deflation".into()));
    }
    let c = b.matvec(&vec![1.0; n]);
    let total: f64 = c.iter().sum();
    let bnorm = b.norm_inf();
    if total.abs() <= 1e-13 * bnorm.max(f64::MIN_POSITIVE) * n as f64 {
        return Err(Error::Eigen(format!(
            "1ᵀB1 = {total:e} vanishes; the constant direction cannot be deflated"
        )));
    }
    let pivot = (0..n)
        .max_by(|&i, &j| c[i].abs().total_cmp(&c[j].abs()))
        .expect("n ≥ 2");
    let mut kb = SymBuilder::new(n - 1);
    let shift = |i: usize| if i < pivot { i } else { i - 1 };
    for (i, j, v) in k.iter() {
        if i <= j && i != pivot && j != pivot {
            kb.add(shift(i), shift(j), v);
        }
    }
    Ok(DeflatedPencil {
        k: kb.build(),
        b: b.clone(),
        direction: c,
        total,
        pivot,
    })
}

/// Full eigendecomposition by cyclic Jacobi rotations.
pub fn dense_eig_oracle(a: &DMatrix<f64>) -> Result<SymmetricDecomposition> {
    jacobi_eigen(a)
}

/// Finite eigenvalues of `K u = λ B u` (`K` SPD) from the two-matrix
/// reduction `K^{-1/2} B K^{-1/2}`, both decompositions by Jacobi. Sorted
/// ascending.
pub fn pencil_oracle_eigenvalues(k: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Vec<f64>> {
    let kd = jacobi_eigen(k)?;
    if kd.values[0] <= 0.0 {
        return Err(Error::NotPositiveDefinite {
            pivot: 0,
            value: kd.values[0],
        });
    }
    let n = k.nrows();
    let inv_sqrt = DMatrix::from_diagonal(&DVector::from_iterator(
        n,
        kd.values.iter().map(|v| 1.0 / v.sqrt()),
    ));
    let s = &kd.vectors * inv_sqrt * kd.vectors.transpose();
    let c = &s * b * &s;
    let cd = jacobi_eigen(&c)?;
    let scale = cd.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut lambdas: Vec<f64> = cd
        .values
        .iter()
        .filter(|m| m.abs() > ZERO_MU_TOL * scale)
        .map(|m| 1.0 / m)
        .collect();
    lambdas.sort_by(f64::total_cmp);
    Ok(lambdas)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_pencil_sides() {
        let k = SparseSym::identity(2);
        let b = SparseSym::diagonal(&[2.0, -1.0]);
        let sp = solve_indefinite_pencil(&k, &b, 1, 1).unwrap();
        assert!((sp.positive[0].lambda - 0.5).abs() < 1e-15);
        assert!((sp.negative[0].lambda + 1.0).abs() < 1e-15);
        let u = &sp.negative[0].vector;
        assert!((b.form(u, u) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_mu_is_not_an_eigenvalue() {
        let k = SparseSym::identity(2);
        let b = SparseSym::diagonal(&[1.0, 0.0]);
        assert!(solve_indefinite_pencil(&k, &b, 1, 0).is_ok());
        assert!(matches!(
            solve_indefinite_pencil(&k, &b, 0, 2),
            Err(Error::CountExceeded { side: "negative", .. })
        ));
    }

    #[test]
    fn spd_pencil_diag() {
        let k = SparseSym::diagonal(&[1.0, 2.0, 3.0]);
        let b = SparseSym::identity(3);
        let p = solve_spd_pencil(&k, &b, 3).unwrap();
        let l: Vec<f64> = p.iter().map(|p| p.lambda).collect();
        for (x, y) in l.iter().zip([1.0, 2.0, 3.0]) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn spd_pencil_rejects_indefinite_mass() {
        let k = SparseSym::identity(2);
        let b = SparseSym::diagonal(&[1.0, -1.0]);
        assert!(matches!(solve_spd_pencil(&k, &b, 1), Err(Error::NotPositiveDefinite { .. })));
    }
}
