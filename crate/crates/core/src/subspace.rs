//! Subspace geometry: orthonormal bases, principal angles, projections and
//! the rotation-aligned distance between feature extractors.
//!
//! Conventions: a feature extractor `B` is a `k x d` matrix acting on inputs
//! `x in R^d`; a [`Subspace`] stores a `d x r` basis with orthonormal columns.
//! The "angle cosine" between two subspaces is the smallest of the
//! `min(dim A, dim B)` singular values of `E^T F`, i.e. the cosine of the
//! largest principal angle.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    column_orthonormality_deviation, gaussian_matrix, gaussian_vector, max_abs, qr_positive,
    singular_values, spectral_norm, RANK_TOL,
};

/// Orthonormality tolerance for [`Subspace`] bases.
pub const SUBSPACE_ORTHO_TOL: f64 = 1e-10;
/// Orthonormality tolerance for feature extractors flagged as row-orthonormal.
pub const EXTRACTOR_ORTHO_TOL: f64 = 1e-8;
/// Relative residual below which a vector counts as lying in a subspace.
pub const CONTAINMENT_TOL: f64 = 1e-10;

/// A `k x d` feature extractor (pretrained, optimal, or an iterate).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureExtractor {
    entries: DMatrix<f64>,
    rows_orthonormal: bool,
}

impl FeatureExtractor {
    /// Wraps an arbitrary `k x d` matrix without the orthonormal-rows flag.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let (k, d) = entries.shape();
        if k == 0 || d <= k {
            return Err(Error::DimConstraintViolated(format!(
                "feature extractor needs k >= 1 and d > k, got k = {k}, d = {d}"
            )));
        }
        Ok(Self {
            entries,
            rows_orthonormal: false,
        })
    }

    /// Wraps a matrix that must already have orthonormal rows.
    pub fn with_orthonormal_rows(entries: DMatrix<f64>) -> Result<Self> {
        let mut fe = Self::new(entries)?;
        let deviation = fe.orthonormality_deviation();
        if deviation > EXTRACTOR_ORTHO_TOL {
            return Err(Error::NotOrthonormal { deviation });
        }
        fe.rows_orthonormal = true;
        Ok(fe)
    }

    /// Orthonormalizes the rows of `m` (QR of the transpose, positive diagonal).
    pub fn orthonormalize_rows(m: &DMatrix<f64>) -> Result<Self> {
        let basis = orthonormalize(&m.transpose())?;
        Self::with_orthonormal_rows(basis.basis.transpose())
    }

    pub fn k(&self) -> usize {
        self.entries.nrows()
    }

    pub fn d(&self) -> usize {
        self.entries.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn rows_orthonormal(&self) -> bool {
        self.rows_orthonormal
    }

    /// Max-norm of `B B^T - I_k`.
    pub fn orthonormality_deviation(&self) -> f64 {
        column_orthonormality_deviation(&self.entries.transpose())
    }

    /// Orthonormal basis of the rowspace of `B`.
    pub fn rowspace(&self) -> Result<Subspace> {
        orthonormalize(&self.entries.transpose())
    }
}

/// A subspace of `R^d`, stored as a `d x r` matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subspace {
    basis: DMatrix<f64>,
}

impl Subspace {
    pub fn from_orthonormal_basis(basis: DMatrix<f64>) -> Result<Self> {
        let (d, r) = basis.shape();
        if r == 0 || r > d {
            return Err(Error::InvalidArgument(format!(
                "subspace basis must be d x r with 1 <= r <= d, got {d} x {r}"
            )));
        }
        let deviation = column_orthonormality_deviation(&basis);
        if deviation > SUBSPACE_ORTHO_TOL {
            return Err(Error::NotOrthonormal { deviation });
        }
        Ok(Self { basis })
    }

    /// Span of the first `r` standard basis vectors of `R^d`.
    pub fn coordinate(d: usize, r: usize) -> Result<Self> {
        let mut basis = DMatrix::zeros(d, r);
        for j in 0..r.min(d) {
            basis[(j, j)] = 1.0;
        }
        Self::from_orthonormal_basis(basis)
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// Orthogonal projector `E E^T` as a dense `d x d` matrix.
    pub fn projector(&self) -> DMatrix<f64> {
        &self.basis * self.basis.transpose()
    }
}

/// An orthogonal `k x k` matrix (determinant `+1` or `-1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rotation {
    entries: DMatrix<f64>,
}

impl Rotation {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::ShapeMismatch {
                expected: (entries.nrows(), entries.nrows()),
                got: entries.shape(),
            });
        }
        let deviation = column_orthonormality_deviation(&entries);
        if deviation > SUBSPACE_ORTHO_TOL {
            return Err(Error::NotOrthonormal { deviation });
        }
        let det = entries.determinant();
        if (det.abs() - 1.0).abs() > 1e-8 {
            return Err(Error::NotOrthonormal {
                deviation: (det.abs() - 1.0).abs(),
            });
        }
        Ok(Self { entries })
    }

    pub fn identity(k: usize) -> Self {
        Self {
            entries: DMatrix::identity(k, k),
        }
    }

    /// Haar-distributed orthogonal matrix.
    pub fn random<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Self {
        let (q, _) = qr_positive(&gaussian_matrix(k, k, rng));
        Self { entries: q }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn determinant(&self) -> f64 {
        self.entries.determinant()
    }
}

/// Orthonormal basis of the column space of a full-column-rank `d x r` matrix.
pub fn orthonormalize(m: &DMatrix<f64>) -> Result<Subspace> {
    let (d, r) = m.shape();
    if r == 0 || r > d {
        return Err(Error::RankDeficient { ratio: 0.0 });
    }
    let s = singular_values(m);
    let ratio = if s[0] > 0.0 { s[r - 1] / s[0] } else { 0.0 };
    if !(ratio > RANK_TOL) {
        return Err(Error::RankDeficient { ratio });
    }
    let (q, _) = qr_positive(m);
    Subspace::from_orthonormal_basis(q)
}

/// All principal-angle cosines between `a` and `b`, descending.
pub fn principal_cosines(a: &Subspace, b: &Subspace) -> Result<Vec<f64>> {
    if a.ambient_dim() != b.ambient_dim() {
        return Err(Error::DimensionMismatch {
            expected: a.ambient_dim(),
            got: b.ambient_dim(),
        });
    }
    let cross = a.basis.transpose() * &b.basis;
    Ok(singular_values(&cross)
        .into_iter()
        .map(|s| s.clamp(0.0, 1.0))
        .collect())
}

/// Cosine of the largest principal angle between `a` and `b`.
pub fn principal_angle_cos(a: &Subspace, b: &Subspace) -> Result<f64> {
    let cos = principal_cosines(a, b)?;
    Ok(cos.last().copied().unwrap_or(0.0))
}

/// Minimum of `||F^T r||` over unit vectors `r` in `a`, where `F` spans `b`.
///
/// Each restart runs projected gradient descent on the unit sphere of
/// coefficients `c` (with `r = E c`). The objective `c^T G c` with
/// `G = (F^T E)^T (F^T E)` has spectrum in `[0, 1]`, so a unit step reduces
/// the iteration to `c <- normalize((I - G) c)`. Every iterate is a feasible
/// point, so the result never undershoots the true minimum.
pub fn variational_angle_estimate<R: Rng + ?Sized>(
    a: &Subspace,
    b: &Subspace,
    n_restarts: usize,
    rng: &mut R,
) -> Result<f64> {
    if a.ambient_dim() != b.ambient_dim() {
        return Err(Error::DimensionMismatch {
            expected: a.ambient_dim(),
            got: b.ambient_dim(),
        });
    }
    if a.dim() > b.dim() {
        return Err(Error::DimOrderViolation {
            first: a.dim(),
            second: b.dim(),
        });
    }
    let cross = b.basis.transpose() * &a.basis;
    let gram = cross.transpose() * &cross;
    let r = a.dim();
    let step = DMatrix::identity(r, r) - &gram;
    let objective = |c: &DVector<f64>| (&cross * c).norm();

    let mut best = f64::INFINITY;
    for _ in 0..n_restarts.max(1) {
        let mut c = gaussian_vector(r, rng);
        c /= c.norm();
        let mut value = objective(&c);
        for _ in 0..200_000 {
            let next = &step * &c;
            let norm = next.norm();
            // (I - G) c vanishes only when c is already a unit-cosine direction
            if norm < 1e-300 {
                break;
            }
            let next = next / norm;
            let next_value = objective(&next);
            let done = (value - next_value).abs() <= 1e-17;
            if next_value <= value {
                value = next_value;
                c = next;
            }
            if done {
                break;
            }
        }
        best = best.min(value);
    }
    Ok(best.clamp(0.0, 1.0))
}

/// Rotation-aligned distance between two row-orthonormal feature extractors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorDistance {
    /// Spectral norm of `B - U B'` at the Frobenius-optimal rotation.
    pub procrustes: f64,
    /// Best value after local refinement on the orthogonal group, if run.
    pub refined: Option<f64>,
    /// Rotation achieving the reported (smallest) distance.
    pub rotation: Rotation,
}

impl ExtractorDistance {
    pub fn value(&self) -> f64 {
        self.refined.unwrap_or(self.procrustes)
    }
}

fn check_distance_inputs(b: &FeatureExtractor, other: &FeatureExtractor) -> Result<()> {
    if b.matrix().shape() != other.matrix().shape() {
        return Err(Error::ShapeMismatch {
            expected: b.matrix().shape(),
            got: other.matrix().shape(),
        });
    }
    for fe in [b, other] {
        if !fe.rows_orthonormal() {
            return Err(Error::NotOrthonormal {
                deviation: fe.orthonormality_deviation(),
            });
        }
    }
    Ok(())
}

fn aligned_gap(b: &DMatrix<f64>, other: &DMatrix<f64>, u: &DMatrix<f64>) -> f64 {
    spectral_norm(&(b - u * other))
}

/// `min_U ||B - U B'||_2` evaluated at the orthogonal Procrustes rotation.
///
/// The Procrustes rotation minimizes the Frobenius norm, so the returned
/// spectral norm is an upper bound on the true minimum (exact for `k = 1`,
/// where both signs are enumerated).
pub fn extractor_distance(
    b: &FeatureExtractor,
    other: &FeatureExtractor,
) -> Result<(f64, Rotation)> {
    check_distance_inputs(b, other)?;
    let (bm, om) = (b.matrix(), other.matrix());
    let k = b.k();
    if k == 1 {
        let plus = DMatrix::from_element(1, 1, 1.0);
        let minus = DMatrix::from_element(1, 1, -1.0);
        let dp = aligned_gap(bm, om, &plus);
        let dm = aligned_gap(bm, om, &minus);
        return Ok(if dm < dp {
            (dm, Rotation { entries: minus })
        } else {
            (dp, Rotation { entries: plus })
        });
    }
    // maximize tr(U B' B^T): with B' B^T = P S Q^T the optimum is U = Q P^T
    let cross = om * bm.transpose();
    let svd = nalgebra::SVD::new(cross, true, true);
    let p = svd.u.expect("requested U");
    let qt = svd.v_t.expect("requested V^T");
    let u = qt.transpose() * p.transpose();
    let dist = aligned_gap(bm, om, &u);
    Ok((dist, Rotation { entries: u }))
}

fn cayley(w: &DMatrix<f64>) -> DMatrix<f64> {
    let k = w.nrows();
    let eye = DMatrix::<f64>::identity(k, k);
    let lhs = &eye - w * 0.5;
    let rhs = &eye + w * 0.5;
    lhs.lu().solve(&rhs).unwrap_or(eye)
}

fn refine_from(bm: &DMatrix<f64>, om: &DMatrix<f64>, start: DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let mut u = start;
    let mut value = aligned_gap(bm, om, &u);
    for _ in 0..200 {
        let gap = bm - &u * om;
        let svd = nalgebra::SVD::new(gap, true, true);
        let (lu, lvt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let top = svd
            .singular_values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let left = lu.column(top).into_owned();
        let right = lvt.row(top).transpose();
        // d/dU of u1^T (B - U B') w1 is -u1 (B' w1)^T
        let grad = -(&left * (om * &right).transpose());
        let m = u.transpose() * &grad;
        let skew = (&m - m.transpose()) * 0.5;
        if max_abs(&skew) < 1e-14 {
            break;
        }
        let mut tau = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let cand = &u * cayley(&(&skew * -tau));
            let cand_value = aligned_gap(bm, om, &cand);
            if cand_value < value - 1e-15 {
                u = cand;
                value = cand_value;
                improved = true;
                break;
            }
            tau *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (value, u)
}

/// Procrustes distance followed by local descent of the spectral norm on the
/// orthogonal group (Cayley retraction), from the Procrustes rotation and
/// `restarts` Haar-random starts. The refined value never exceeds the
/// Procrustes value.
pub fn extractor_distance_refined<R: Rng + ?Sized>(
    b: &FeatureExtractor,
    other: &FeatureExtractor,
    restarts: usize,
    rng: &mut R,
) -> Result<ExtractorDistance> {
    let (procrustes, rotation) = extractor_distance(b, other)?;
    if b.k() == 1 {
        return Ok(ExtractorDistance {
            procrustes,
            refined: Some(procrustes),
            rotation,
        });
    }
    let (bm, om) = (b.matrix(), other.matrix());
    let (mut best, mut best_u) = refine_from(bm, om, rotation.entries.clone());
    for _ in 0..restarts {
        let start = Rotation::random(b.k(), rng).entries;
        let (value, u) = refine_from(bm, om, start);
        if value < best {
            best = value;
            best_u = u;
        }
    }
    if best >= procrustes {
        return Ok(ExtractorDistance {
            procrustes,
            refined: Some(procrustes),
            rotation,
        });
    }
    Ok(ExtractorDistance {
        procrustes,
        refined: Some(best),
        rotation: Rotation { entries: best_u },
    })
}

/// Orthogonal projection of `x` onto `s`.
pub fn project(s: &Subspace, x: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() != s.ambient_dim() {
        return Err(Error::DimensionMismatch {
            expected: s.ambient_dim(),
            got: x.len(),
        });
    }
    Ok(&s.basis * (s.basis.transpose() * x))
}

/// Orthonormal basis of the orthogonal complement of `s`.
pub fn orthogonal_complement(s: &Subspace) -> Result<Subspace> {
    let (d, r) = s.basis.shape();
    if r >= d {
        return Err(Error::FullAmbient);
    }
    // QR of [E | I_d]: the trailing d - r columns of Q span the complement.
    let mut stacked = DMatrix::zeros(d, r + d);
    stacked.columns_mut(0, r).copy_from(&s.basis);
    stacked
        .columns_mut(r, d)
        .copy_from(&DMatrix::<f64>::identity(d, d));
    let (q, _) = qr_positive(&stacked);
    Subspace::from_orthonormal_basis(q.columns(r, d - r).into_owned())
}

/// Uniformly random `r`-dimensional subspace of `R^d` (Haar measure).
pub fn sample_uniform_subspace<R: Rng + ?Sized>(
    d: usize,
    r: usize,
    rng: &mut R,
) -> Result<Subspace> {
    if r == 0 || r > d {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= r <= d, got r = {r}, d = {d}"
        )));
    }
    orthonormalize(&gaussian_matrix(d, r, rng))
}

/// `span(S ∪ {w})`, which must be one dimension larger than `S`.
pub fn span_with_vector(s: &Subspace, w: &DVector<f64>) -> Result<Subspace> {
    let proj = project(s, w)?;
    let residual = (w - proj).norm();
    let scale = w.norm();
    if !(residual > CONTAINMENT_TOL * scale) {
        return Err(Error::AlreadyContained {
            residual: if scale > 0.0 { residual / scale } else { 0.0 },
        });
    }
    let (d, r) = s.basis.shape();
    let mut stacked = DMatrix::zeros(d, r + 1);
    stacked.columns_mut(0, r).copy_from(&s.basis);
    stacked.column_mut(r).copy_from(w);
    let (q, _) = qr_positive(&stacked);
    Subspace::from_orthonormal_basis(q)
}
