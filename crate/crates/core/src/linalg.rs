//! Small dense helpers shared by the solver and the extraction code.

use nalgebra::{DMatrix, DVector};

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted descending.
pub fn sorted_symmetric_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = m.clone().symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vectors.set_column(k, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

/// PSD test: smallest eigenvalue at least `-rel_tol * max(1, largest)`.
pub fn is_psd(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    if m.is_empty() {
        return true;
    }
    let eig = m.clone().symmetric_eigen().eigenvalues;
    eig.min() >= -rel_tol * eig.max().abs().max(1.0)
}

/// Count of eigenvalues above `rel_tol` times the largest one.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let eig = m.clone().symmetric_eigen().eigenvalues;
    let top = eig.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    if top == 0.0 {
        return 0;
    }
    eig.iter().filter(|&&v| v > rel_tol * top).count()
}

/// Symmetric part `(X + X^T) / 2`.
pub fn sym(x: &DMatrix<f64>) -> DMatrix<f64> {
    (x + x.transpose()) * 0.5
}

/// Frobenius inner product.
pub fn frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}
