//! Small dense helpers shared by the geometry and flow code.

use nalgebra::{DMatrix, DVector, QR, SVD};
use rand::Rng;
use rand_distr::StandardNormal;

/// Singular values below this fraction of the largest count as zero.
pub const RANK_TOL: f64 = 1e-12;

/// Thin Householder QR with the diagonal of `R` made nonnegative.
///
/// For an `n x p` input, `Q` is `n x min(n, p)` and `R` is `min(n, p) x p`.
pub fn qr_positive(m: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let qr = QR::new(m.clone());
    let mut q = qr.q();
    let mut r = qr.r();
    for j in 0..q.ncols().min(r.nrows()) {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
            r.row_mut(j).neg_mut();
        }
    }
    (q, r)
}

/// Singular values sorted in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<f64> = SVD::new(m.clone(), false, false)
        .singular_values
        .iter()
        .copied()
        .collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// Ratio of smallest to largest singular value (0 for a zero matrix).
pub fn conditioning_ratio(m: &DMatrix<f64>) -> f64 {
    let s = singular_values(m);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if hi > 0.0 => lo / hi,
        _ => 0.0,
    }
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Max-norm of `M^T M - I`.
pub fn column_orthonormality_deviation(m: &DMatrix<f64>) -> f64 {
    let gram = m.transpose() * m;
    max_abs(&(gram - DMatrix::identity(m.ncols(), m.ncols())))
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    // Filled row-major so the draw order does not depend on storage layout.
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(rng.sample::<f64, _>(StandardNormal));
    }
    DMatrix::from_row_slice(rows, cols, &data)
}

pub fn gaussian_vector<R: Rng + ?Sized>(len: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(len, (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}
