//! Block Krylov iteration with full reorthogonalization and Rayleigh–Ritz
//! extraction of the extreme eigenpairs of a symmetric operator.
//!
//! The block start (size ≥ 2) keeps exactly repeated eigenvalues from being
//! missed, which matters on the symmetric square grids used for the limit
//! problems.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::sparse::{axpy, dot, norm2};
use super::symmetric_eigen_ascending;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct KrylovOptions {
    pub block: usize,
    /// Residual target relative to the largest Ritz value magnitude.
    pub tol: f64,
    pub max_basis: usize,
    pub seed: u64,
}

impl Default for KrylovOptions {
    fn default() -> Self {
        Self {
            block: 3,
            tol: 1e-12,
            max_basis: 3000,
            seed: 0x5eed_0f_7e57,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RitzPair {
    pub value: f64,
    pub vector: Vec<f64>,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct KrylovResult {
    /// Largest eigenvalues, descending.
    pub top: Vec<RitzPair>,
    /// Smallest eigenvalues, ascending.
    pub bottom: Vec<RitzPair>,
    pub basis_size: usize,
    pub scale: f64,
}

/// Computes `want_top` largest and `want_bottom` smallest eigenpairs of the
/// symmetric operator `op` acting on vectors of length `n`.
pub fn extreme_eigenpairs<F>(
    op: F,
    n: usize,
    want_top: usize,
    want_bottom: usize,
    opts: KrylovOptions,
) -> Result<KrylovResult>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if want_top + want_bottom > n {
        return Err(Error::Eigen(format!(
            "asked for {} eigenpairs of an operator of size {n}",
            want_top + want_bottom
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let p = opts.block.max(1).min(n);
    let cap = opts.max_basis.min(n);

    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut images: Vec<Vec<f64>> = Vec::new();
    let mut h: Vec<Vec<f64>> = Vec::new();
    let mut next_check = (4 * p).max(want_top + want_bottom + p);

    let mut fresh: Vec<Vec<f64>> = Vec::new();
    for _ in 0..p {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if let Some(q) = orthonormalize_against(&v, &basis, &fresh) {
            fresh.push(q);
        }
    }

    loop {
        let block_start = basis.len();
        for v in fresh.drain(..) {
            let w = op(&v);
            basis.push(v);
            images.push(w);
            let j = basis.len() - 1;
            // Only the upper triangle `vᵢ·wⱼ, i ≤ j` is kept.
            let col: Vec<f64> = (0..=j).map(|i| dot(&basis[i], &images[j])).collect();
            h.push(col);
        }
        let k = basis.len();

        if k >= next_check || k >= cap {
            let hm = DMatrix::from_fn(k, k, |i, j| {
                let (a, b) = if i <= j { (i, j) } else { (j, i) };
                h[b][a]
            });
            let (theta, s) = symmetric_eigen_ascending(&hm);
            let scale = theta.iter().fold(0.0_f64, |m, t| m.max(t.abs()));
            let tol = opts.tol * scale.max(f64::MIN_POSITIVE);

            let ritz = |idx: usize| -> RitzPair {
                let mut x = vec![0.0; n];
                let mut wx = vec![0.0; n];
                for c in 0..k {
                    let sc = s[(c, idx)];
                    axpy(sc, &basis[c], &mut x);
                    axpy(sc, &images[c], &mut wx);
                }
                axpy(-theta[idx], &x, &mut wx);
                RitzPair {
                    value: theta[idx],
                    vector: x,
                    residual: norm2(&wx),
                }
            };
            let top: Vec<RitzPair> = (0..want_top).map(|i| ritz(k - 1 - i)).collect();
            let bottom: Vec<RitzPair> = (0..want_bottom).map(ritz).collect();
            let converged = top.iter().chain(&bottom).all(|r| r.residual <= tol);
            if converged || k >= n {
                return Ok(KrylovResult {
                    top,
                    bottom,
                    basis_size: k,
                    scale,
                });
            }
            if k >= cap {
                let worst = top
                    .iter()
                    .chain(&bottom)
                    .map(|r| r.residual / scale)
                    .fold(0.0, f64::max);
                return Err(Error::Eigen(format!(
                    "block Krylov stalled at basis size {k}; worst relative residual {worst:e}"
                )));
            }
            next_check = (k + p).max(((k as f64) * 1.3).ceil() as usize).min(cap);
        }

        for w in &images[block_start..] {
            if basis.len() + fresh.len() >= n {
                break;
            }
            if let Some(q) = orthonormalize_against(w, &basis, &fresh) {
                fresh.push(q);
            }
        }
        while fresh.is_empty() && basis.len() < n {
            // Invariant subspace found; restart with a random direction.
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            if let Some(q) = orthonormalize_against(&v, &basis, &fresh) {
                fresh.push(q);
            }
        }
    }
}

/// Classical Gram–Schmidt applied twice.
fn orthonormalize_against(v: &[f64], a: &[Vec<f64>], b: &[Vec<f64>]) -> Option<Vec<f64>> {
    let mut r = v.to_vec();
    let before = norm2(&r);
    if before == 0.0 {
        return None;
    }
    for _ in 0..2 {
        for q in a.iter().chain(b) {
            let c = dot(q, &r);
            axpy(-c, q, &mut r);
        }
    }
    let after = norm2(&r);
    if after <= 1e-10 * before {
        return None;
    }
    r.iter_mut().for_each(|x| *x /= after);
    Some(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_both_ends_of_a_diagonal_operator() {
        let n = 300;
        let d: Vec<f64> = (0..n).map(|i| (i as f64 - 120.0) / 7.0).collect();
        let res = extreme_eigenpairs(
            |x| x.iter().zip(&d).map(|(a, b)| a * b).collect(),
            n,
            3,
            2,
            KrylovOptions::default(),
        )
        .unwrap();
        let tops: Vec<f64> = res.top.iter().map(|r| r.value).collect();
        let bots: Vec<f64> = res.bottom.iter().map(|r| r.value).collect();
        assert!((tops[0] - d[n - 1]).abs() < 1e-10);
        assert!((tops[2] - d[n - 3]).abs() < 1e-10);
        assert!((bots[1] - d[1]).abs() < 1e-10);
    }

    #[test]
    fn resolves_a_double_eigenvalue() {
        let n = 200;
        let mut d: Vec<f64> = (0..n).map(|i| 1.0 / (1.0 + i as f64)).collect();
        d[1] = d[0];
        let res = extreme_eigenpairs(
            |x| x.iter().zip(&d).map(|(a, b)| a * b).collect(),
            n,
            3,
            0,
            KrylovOptions::default(),
        )
        .unwrap();
        assert!((res.top[0].value - 1.0).abs() < 1e-12);
        assert!((res.top[1].value - 1.0).abs() < 1e-12);
        assert!((res.top[2].value - d[2]).abs() < 1e-12);
    }
}
