//! Reproducible problem instances for the overparameterized two-layer linear
//! setting: ground truth `(B*, v*)`, an ID subspace with Gaussian training
//! data, a perturbed pretrained extractor `B0` at a controlled distance from
//! `B*`, a head initialization, and an OOD second moment.

use nalgebra::{DMatrix, DVector, SVD};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gaussian_matrix, gaussian_vector, RANK_TOL};
use crate::rng::{component_rng, instance_seed, Component};
use crate::subspace::{
    extractor_distance, orthogonal_complement, orthonormalize, FeatureExtractor, Subspace,
};

/// A linear head `v in R^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head(DVector<f64>);

impl Head {
    pub fn new(v: DVector<f64>) -> Result<Self> {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("head has non-finite entries".into()));
        }
        Ok(Self(v))
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(v))
    }

    pub fn zeros(k: usize) -> Self {
        Self(DVector::zeros(k))
    }

    pub fn vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// How the head is initialized before training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
#[derive(Default)]
pub enum HeadMode {
    #[default]
    Zero,
    Gaussian {
        sigma_sq: f64,
    },
    /// Resolved by the flow engine to the linear-probing solution.
    Lp,
}

/// Result of [`make_head_init`]; the `Lp` mode has no numeric content yet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum HeadInit {
    Vector(Head),
    LpPending,
}

impl HeadInit {
    pub fn as_head(&self) -> Option<&Head> {
        match self {
            HeadInit::Vector(h) => Some(h),
            HeadInit::LpPending => None,
        }
    }
}

/// Training inputs `X` (rows are examples), labels `Y`, and `rowspace(X)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub span: Subspace,
}

impl TrainingSet {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                got: y.len(),
            });
        }
        if x.iter().all(|v| *v == 0.0) {
            return Err(Error::InvalidArgument(
                "training inputs are all zero".into(),
            ));
        }
        let span = rowspace(&x)?;
        Ok(Self { x, y, span })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }
}

/// Orthonormal basis of the rowspace of `x` (numerical rank from the SVD).
pub fn rowspace(x: &DMatrix<f64>) -> Result<Subspace> {
    let svd = SVD::new(x.clone(), false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, s)| **s > RANK_TOL * smax)
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Err(Error::RankDeficient { ratio: 0.0 });
    }
    let cols: Vec<DVector<f64>> = keep.iter().map(|&i| v_t.row(i).transpose()).collect();
    orthonormalize(&DMatrix::from_columns(&cols))
}

/// OOD second moment `Sigma = E[x x^T]`, symmetric positive definite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondMoment {
    sigma: DMatrix<f64>,
}

impl SecondMoment {
    pub fn new(sigma: DMatrix<f64>) -> Result<Self> {
        if !sigma.is_square() {
            return Err(Error::NotPositiveDefinite("matrix is not square".into()));
        }
        let asym = (&sigma - sigma.transpose()).amax();
        if asym > 1e-12 {
            return Err(Error::NotPositiveDefinite(format!("asymmetry {asym:.3e}")));
        }
        let min_eig = sigma.clone().symmetric_eigen().eigenvalues.min();
        if !(min_eig > 0.0) {
            return Err(Error::NotPositiveDefinite(format!(
                "smallest eigenvalue {min_eig:.3e}"
            )));
        }
        Ok(Self { sigma })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.sigma.clone().symmetric_eigen().eigenvalues.min()
    }

    /// `e^T Sigma e`.
    pub fn quadratic_form(&self, e: &DVector<f64>) -> f64 {
        e.dot(&(&self.sigma * e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
#[derive(Default)]
pub enum SigmaMode {
    #[default]
    Identity,
    Diagonal {
        entries: Vec<f64>,
    },
}

pub fn make_ood_second_moment(d: usize, mode: &SigmaMode) -> Result<SecondMoment> {
    match mode {
        SigmaMode::Identity => SecondMoment::new(DMatrix::identity(d, d)),
        SigmaMode::Diagonal { entries } => {
            if entries.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: entries.len(),
                });
            }
            if let Some(bad) = entries.iter().find(|e| !(**e > 0.0)) {
                return Err(Error::NotPositiveDefinite(format!("diagonal entry {bad}")));
            }
            SecondMoment::new(DMatrix::from_diagonal(&DVector::from_column_slice(entries)))
        }
    }
}

/// `B*` with orthonormal rows and `v*` uniform on the sphere of radius `w_norm`.
pub fn make_ground_truth<R: Rng + ?Sized>(
    d: usize,
    k: usize,
    w_norm: f64,
    rng: &mut R,
) -> Result<(FeatureExtractor, Head)> {
    if k == 0 || d <= k {
        return Err(Error::DimConstraintViolated(format!(
            "ground truth needs d > k >= 1, got d = {d}, k = {k}"
        )));
    }
    if !(w_norm > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "w_norm must be positive, got {w_norm}"
        )));
    }
    let b_star = FeatureExtractor::orthonormalize_rows(&gaussian_matrix(k, d, rng))?;
    let mut v = gaussian_vector(k, rng);
    while v.norm() == 0.0 {
        v = gaussian_vector(k, rng);
    }
    // rows of B* are orthonormal, so ||B*^T v*|| = ||v*||
    let v_star = Head::new(&v * (w_norm / v.norm()))?;
    Ok((b_star, v_star))
}

/// `n` inputs `x = F z` with `z ~ N(0, I_m)`, labelled by `y = v*^T B* x`.
pub fn sample_training_data<R: Rng + ?Sized>(
    id_basis: &Subspace,
    n: usize,
    b_star: &FeatureExtractor,
    v_star: &Head,
    rng: &mut R,
) -> Result<TrainingSet> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "need at least one training example".into(),
        ));
    }
    if id_basis.ambient_dim() != b_star.d() {
        return Err(Error::DimensionMismatch {
            expected: b_star.d(),
            got: id_basis.ambient_dim(),
        });
    }
    let z = gaussian_matrix(n, id_basis.dim(), rng);
    let x = z * id_basis.basis().transpose();
    let w_star = b_star.matrix().transpose() * v_star.vector();
    let y = &x * w_star;
    TrainingSet::new(x, y)
}

/// Pretrained extractor `B0` at extractor distance `eps_target` from `B*`.
///
/// `B0` = row-orthonormalized `B* + s G` for a fixed Gaussian direction `G`;
/// the scale `s` is found by bisection.
pub fn perturb_extractor<R: Rng + ?Sized>(
    b_star: &FeatureExtractor,
    eps_target: f64,
    rng: &mut R,
) -> Result<FeatureExtractor> {
    if !(0.0..0.5).contains(&eps_target) {
        return Err(Error::InvalidArgument(format!(
            "eps_target must lie in [0, 0.5), got {eps_target}"
        )));
    }
    if eps_target == 0.0 {
        return Ok(b_star.clone());
    }
    let g = gaussian_matrix(b_star.k(), b_star.d(), rng);
    let candidate = |s: f64| -> Result<(FeatureExtractor, f64)> {
        let fe = FeatureExtractor::orthonormalize_rows(&(b_star.matrix() + &g * s))?;
        let (dist, _) = extractor_distance(&fe, b_star)?;
        Ok((fe, dist))
    };

    let mut lo = 0.0;
    let mut hi = eps_target / g.norm().max(1e-300) * (b_star.k() as f64).sqrt();
    let mut bracketed = false;
    for _ in 0..60 {
        if candidate(hi)?.1 >= eps_target {
            bracketed = true;
            break;
        }
        lo = hi;
        hi *= 2.0;
    }
    if !bracketed {
        return Err(Error::TargetUnreachable { target: eps_target });
    }
    let mut best = candidate(hi)?;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let (fe, dist) = candidate(mid)?;
        if (dist - eps_target).abs() < (best.1 - eps_target).abs() {
            best = (fe, dist);
        }
        if (dist - eps_target).abs() <= 1e-12 * eps_target {
            break;
        }
        if dist < eps_target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if (best.1 - eps_target).abs() > 1e-3 * eps_target {
        return Err(Error::TargetUnreachable { target: eps_target });
    }
    Ok(best.0)
}

pub fn make_head_init<R: Rng + ?Sized>(k: usize, mode: HeadMode, rng: &mut R) -> Result<HeadInit> {
    match mode {
        HeadMode::Zero => Ok(HeadInit::Vector(Head::zeros(k))),
        HeadMode::Gaussian { sigma_sq } => {
            if !(sigma_sq > 0.0) || !sigma_sq.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "head variance must be positive, got {sigma_sq}"
                )));
            }
            let normal = Normal::new(0.0, sigma_sq.sqrt())
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            let v = DVector::from_iterator(k, (0..k).map(|_| normal.sample(rng)));
            Ok(HeadInit::Vector(Head::new(v)?))
        }
        HeadMode::Lp => Ok(HeadInit::LpPending),
    }
}

/// Configuration of a single instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstanceConfig {
    /// Input dimension.
    pub d: usize,
    /// Feature dimension.
    pub k: usize,
    /// ID subspace dimension.
    pub m: usize,
    /// Number of training examples.
    pub n: usize,
    /// Target extractor distance `d(B0, B*)`.
    pub eps: f64,
    /// `||w*||_2`.
    pub w_norm: f64,
    pub head: HeadMode,
    pub sigma: SigmaMode,
    /// Instance seed; batteries derive it from a master seed.
    pub seed: u64,
}

impl Default for InstanceConfig {
    fn default() -> Self {
        Self {
            d: 100,
            k: 5,
            m: 20,
            n: 40,
            eps: 0.05,
            w_norm: 1.0,
            head: HeadMode::Zero,
            sigma: SigmaMode::Identity,
            seed: 0,
        }
    }
}

impl InstanceConfig {
    pub fn validate(&self) -> Result<()> {
        let Self { d, k, m, n, .. } = *self;
        if k == 0 {
            return Err(Error::DimConstraintViolated("k >= 1 required".into()));
        }
        if !(k < m) {
            return Err(Error::DimConstraintViolated(format!(
                "k < m required (k = {k}, m = {m})"
            )));
        }
        if !(m + k < d) {
            return Err(Error::DimConstraintViolated(format!(
                "m < d - k required (m = {m}, d = {d}, k = {k})"
            )));
        }
        if n < m {
            return Err(Error::DimConstraintViolated(format!(
                "n >= m required (n = {n}, m = {m})"
            )));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn with_eps(&self, eps: f64) -> Self {
        Self {
            eps,
            ..self.clone()
        }
    }

    /// `count` configs whose seeds derive from `master`.
    pub fn battery(&self, master: u64, count: usize) -> Vec<InstanceConfig> {
        (0..count as u64)
            .map(|i| self.with_seed(instance_seed(master, i)))
            .collect()
    }
}

/// One fully specified problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub d: usize,
    pub k: usize,
    pub m: usize,
    pub n: usize,
    pub b_star: FeatureExtractor,
    pub v_star: Head,
    pub w_star: DVector<f64>,
    /// `F`: orthonormal basis of the ID subspace (`d x m`).
    pub id_basis: Subspace,
    pub train: TrainingSet,
    /// Orthogonal complement of `rowspace(X)`.
    pub span_perp: Subspace,
    pub b_init: FeatureExtractor,
    pub v_init: HeadInit,
    pub head_mode: HeadMode,
    pub sigma_ood: SecondMoment,
    pub eps_measured: f64,
    pub seed: u64,
}

/// Parts of an instance before derived quantities are filled in.
#[derive(Debug, Clone)]
pub struct InstanceParts {
    pub b_star: FeatureExtractor,
    pub v_star: Head,
    pub id_basis: Subspace,
    pub train: TrainingSet,
    pub b_init: FeatureExtractor,
    pub v_init: HeadInit,
    pub head_mode: HeadMode,
    pub sigma_ood: SecondMoment,
    pub seed: u64,
}

impl ProblemInstance {
    /// Assembles an instance from parts, checking shapes and computing `w*`,
    /// `S^perp` and the measured pretraining error. Does not enforce the
    /// dimension ordering of [`InstanceConfig::validate`], so hand-built
    /// low-dimensional examples are allowed.
    pub fn assemble(parts: InstanceParts) -> Result<Self> {
        let InstanceParts {
            b_star,
            v_star,
            id_basis,
            train,
            b_init,
            v_init,
            head_mode,
            sigma_ood,
            seed,
        } = parts;
        let (k, d) = (b_star.k(), b_star.d());
        if b_init.matrix().shape() != (k, d) {
            return Err(Error::ShapeMismatch {
                expected: (k, d),
                got: b_init.matrix().shape(),
            });
        }
        if v_star.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: v_star.len(),
            });
        }
        if let Some(h) = v_init.as_head() {
            if h.len() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    got: h.len(),
                });
            }
        }
        for got in [
            id_basis.ambient_dim(),
            train.d(),
            sigma_ood.matrix().nrows(),
        ] {
            if got != d {
                return Err(Error::DimensionMismatch { expected: d, got });
            }
        }
        let w_star = b_star.matrix().transpose() * v_star.vector();
        let span_perp = orthogonal_complement(&train.span)?;
        let (eps_measured, _) = extractor_distance(&b_init, &b_star)?;
        Ok(Self {
            d,
            k,
            m: id_basis.dim(),
            n: train.n(),
            b_star,
            v_star,
            w_star,
            id_basis,
            train,
            span_perp,
            b_init,
            v_init,
            head_mode,
            sigma_ood,
            eps_measured,
            seed,
        })
    }

    /// `rowspace(B0)`.
    pub fn r_init(&self) -> Subspace {
        self.b_init.rowspace().expect("B0 has orthonormal rows")
    }

    /// `rowspace(B*)`.
    pub fn r_star(&self) -> Subspace {
        self.b_star.rowspace().expect("B* has orthonormal rows")
    }
}

pub fn build_instance(config: &InstanceConfig) -> Result<ProblemInstance> {
    config.validate()?;
    let seed = config.seed;
    let (b_star, v_star) = make_ground_truth(
        config.d,
        config.k,
        config.w_norm,
        &mut component_rng(seed, Component::GroundTruth),
    )?;
    let id_basis = crate::subspace::sample_uniform_subspace(
        config.d,
        config.m,
        &mut component_rng(seed, Component::IdSubspace),
    )?;
    let train = sample_training_data(
        &id_basis,
        config.n,
        &b_star,
        &v_star,
        &mut component_rng(seed, Component::TrainingData),
    )?;
    let b_init = perturb_extractor(
        &b_star,
        config.eps,
        &mut component_rng(seed, Component::Perturbation),
    )?;
    let v_init = make_head_init(
        config.k,
        config.head,
        &mut component_rng(seed, Component::HeadInit),
    )?;
    let sigma_ood = make_ood_second_moment(config.d, &config.sigma)?;
    ProblemInstance::assemble(InstanceParts {
        b_star,
        v_star,
        id_basis,
        train,
        b_init,
        v_init,
        head_mode: config.head,
        sigma_ood,
        seed,
    })
}
