use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Largest matrix the cyclic Jacobi method is allowed to touch.
pub const JACOBI_MAX_DIM: usize = 4000;

/// Full symmetric eigendecomposition, eigenvalues ascending, eigenvectors
/// in the matching columns.
#[derive(Debug, Clone)]
pub struct SymmetricDecomposition {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
    pub sweeps: usize,
    pub off_norm: f64,
}

/// Cyclic Jacobi rotations until the off-diagonal Frobenius norm drops to
/// `1e-12·‖A‖_F`.
pub fn jacobi_eigen(a: &DMatrix<f64>) -> Result<SymmetricDecomposition> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Dimension(format!("{}x{} is not square", n, a.ncols())));
    }
    if n > JACOBI_MAX_DIM {
        return Err(Error::Budget(format!(
            "jacobi eigensolver limited to n <= {JACOBI_MAX_DIM}, got {n}"
        )));
    }
    let mut m = a.clone();
    // Work on the symmetric part so stray asymmetry cannot stall the sweeps.
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = s;
            m[(j, i)] = s;
        }
    }
    let mut v = DMatrix::<f64>::identity(n, n);
    let total = m.norm();
    let target = 1e-12 * total.max(f64::MIN_POSITIVE);
    let off = |m: &DMatrix<f64>| {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[(i, j)] * m[(i, j)];
                }
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    let mut off_norm = off(&m);
    while off_norm > target {
        if sweeps >= 100 {
            return Err(Error::Eigen(format!(
                "jacobi did not converge: off-norm {off_norm:e} after {sweeps} sweeps"
            )));
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        sweeps += 1;
        off_norm = off(&m);
    }

    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| m[(i, i)].total_cmp(&m[(j, j)]));
    let values = idx.iter().map(|&i| m[(i, i)]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| v[(r, idx[c])]);
    Ok(SymmetricDecomposition {
        values,
        vectors,
        sweeps,
        off_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let d = jacobi_eigen(&a).unwrap();
        assert!((d.values[0] - 1.0).abs() < 1e-14);
        assert!((d.values[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn diagonal_input_needs_no_sweeps() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, -1.0, 2.0]));
        let d = jacobi_eigen(&a).unwrap();
        assert_eq!(d.sweeps, 0);
        assert_eq!(d.values, vec![-1.0, 2.0, 3.0]);
    }
}
