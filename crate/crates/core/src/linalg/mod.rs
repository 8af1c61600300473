//! Linear algebra kernels: sparse symmetric storage, envelope Cholesky,
//! the Jacobi reference eigensolver and a block Krylov extreme-eigenpair
//! iteration.

pub mod jacobi;
pub mod krylov;
pub mod skyline;
pub mod sparse;

pub use jacobi::{jacobi_eigen, SymmetricDecomposition};
pub use skyline::{rcm_ordering, SkylineCholesky};
pub use sparse::{axpy, dot, norm2, SparseSym, SymBuilder};

use nalgebra::{DMatrix, SymmetricEigen};

/// Ascending eigendecomposition through Householder tridiagonalization and
/// implicit QL (nalgebra). This is the production dense path; the Jacobi
/// routine is reserved for cross-checks.
pub fn symmetric_eigen_ascending(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let sym = DMatrix::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
    let eig = SymmetricEigen::new(sym);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, idx[c])]);
    (values, vectors)
}
