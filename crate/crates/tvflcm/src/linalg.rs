//! Dense linear algebra helpers shared by the fitting code.
//!
//! Data matrices live in `ndarray`; factorizations route through
//! `nalgebra`, which has robust pure-Rust Cholesky and symmetric
//! eigendecompositions at the modest coefficient counts used here.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

pub fn to_na(a: ArrayView2<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub fn to_nd(a: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.nrows(), a.ncols()), |(i, j)| a[(i, j)])
}

/// Solves `A x = b` for symmetric positive definite `A` via Cholesky.
pub fn chol_solve(a: ArrayView2<'_, f64>, b: ArrayView1<'_, f64>) -> Option<Array1<f64>> {
    let chol = to_na(a).cholesky()?;
    let x = chol.solve(&DVector::from_iterator(b.len(), b.iter().copied()));
    Some(Array1::from_iter(x.iter().copied()))
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn chol_inverse(a: ArrayView2<'_, f64>) -> Option<Array2<f64>> {
    let inv = to_na(a).cholesky()?.inverse();
    Some(to_nd(&inv))
}

/// Log-determinant of a symmetric positive definite matrix.
pub fn chol_logdet(a: ArrayView2<'_, f64>) -> Option<f64> {
    let chol = to_na(a).cholesky()?;
    Some(2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Eigendecomposition of a symmetric matrix, eigenvalues descending.
/// Returns `(values, vectors)` with eigenvectors in the columns.
pub fn sym_eigen(a: ArrayView2<'_, f64>) -> (Array1<f64>, Array2<f64>) {
    let n = a.nrows();
    // Symmetrize defensively; callers hold matrices symmetric to rounding.
    let mut m = to_na(a);
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());
    let values = Array1::from_iter(order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors =
        Array2::from_shape_fn((n, n), |(i, j)| eig.eigenvectors[(i, order[j])]);
    (values, vectors)
}

/// Orthonormal basis of the null space of a set of row constraints
/// `C theta = 0`, computed from the eigendecomposition of `C^T C`.
/// Returns a `p x (p - rank)` matrix with orthonormal columns.
pub fn constraint_null_basis(constraints: ArrayView2<'_, f64>) -> Array2<f64> {
    let p = constraints.ncols();
    let ctc = constraints.t().dot(&constraints);
    let (values, vectors) = sym_eigen(ctc.view());
    let tol = values[0].max(1.0) * 1e-12;
    let null_cols: Vec<usize> = (0..p).filter(|&j| values[j] <= tol).collect();
    let mut basis = Array2::zeros((p, null_cols.len()));
    for (k, &j) in null_cols.iter().enumerate() {
        basis.column_mut(k).assign(&vectors.column(j));
    }
    basis
}

/// Kronecker product with index convention
/// `kron(A, B)[(i*m + k, j*n + l)] = A[i, j] * B[k, l]`
/// where `B` is `m x n`.
pub fn kron(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[[i, j]];
            if aij == 0.0 {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[[i * br + k, j * bc + l]] = aij * b[[k, l]];
                }
            }
        }
    }
    out
}

/// Symmetric congruence transform `T^T A T`.
pub fn congruence(t: ArrayView2<'_, f64>, a: ArrayView2<'_, f64>) -> Array2<f64> {
    let at = a.dot(&t);
    let mut out = t.t().dot(&at);
    // enforce exact symmetry
    let n = out.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (out[[i, j]] + out[[j, i]]);
            out[[i, j]] = v;
            out[[j, i]] = v;
        }
    }
    out
}
