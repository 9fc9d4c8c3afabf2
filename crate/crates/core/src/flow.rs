//! Gradient flows of fine-tuning (head and extractor), linear probing (head
//! only) and LP-FT on the squared training loss `||X B^T v - Y||^2`, plus the
//! closed-form ID and OOD losses.
//!
//! The flows are integrated with classical RK4. Step sizes are controlled by
//! a step-doubling local error estimate, capped by a curvature bound that
//! keeps RK4 inside its stability interval, and halved whenever a step would
//! increase the training loss.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SVD};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, spectral_norm};
use crate::problem::{Head, HeadInit, ProblemInstance, TrainingSet};
use crate::subspace::FeatureExtractor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    /// First step; `None` uses `1e-3 / sigma_max(X)^2`.
    pub initial_step: Option<f64>,
    pub t_max: f64,
    /// Converged once the loss (or the gradient norm) falls below this
    /// fraction of its initial value.
    pub loss_tol: f64,
    /// Number of log-spaced sample times in `[initial_step, t_max]`.
    pub n_samples: usize,
    /// Consecutive step rejections tolerated before giving up.
    pub max_halvings: u32,
    /// Per-step local error tolerance, relative to `1 + max|state|`.
    pub local_error_tol: f64,
    /// Keep integrating at least until this time even if converged.
    pub min_time: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            initial_step: None,
            t_max: 1e6,
            loss_tol: 1e-12,
            n_samples: 200,
            max_halvings: 40,
            local_error_tol: 1e-12,
            min_time: 0.0,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!(
                    "{name} must be positive, got {v}"
                )))
            }
        };
        if let Some(h) = self.initial_step {
            positive("initial_step", h)?;
        }
        positive("t_max", self.t_max)?;
        positive("loss_tol", self.loss_tol)?;
        positive("local_error_tol", self.local_error_tol)?;
        if self.n_samples == 0 || self.max_halvings == 0 {
            return Err(Error::InvalidArgument(
                "n_samples and max_halvings must be positive".into(),
            ));
        }
        if !(self.min_time >= 0.0) {
            return Err(Error::InvalidArgument(
                "min_time must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "FT")]
    FineTuning,
    #[serde(rename = "LP")]
    LinearProbing,
    #[serde(rename = "LPFT")]
    LpFt,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::FineTuning => "FT",
            Method::LinearProbing => "LP",
            Method::LpFt => "LPFT",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    pub t: f64,
    pub v: Head,
    pub b: FeatureExtractor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub train_loss: f64,
    pub l_id: f64,
    pub l_ood: f64,
    /// `||(v v^T - B B^T) - (v0 v0^T - B0 B0^T)||_F`.
    pub balancedness_drift: f64,
    /// `max_u ||B u - B0 u||` over the basis of `rowspace(X)`.
    pub feature_drift_s: f64,
    /// Same over the basis of `rowspace(X)^perp`.
    pub feature_drift_sperp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub state: FlowState,
    pub metrics: Metrics,
    pub terminal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    Converged,
    TimeLimit,
    /// Too many consecutive step rejections.
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub method: Method,
    pub samples: Vec<Sample>,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub steps: usize,
    /// Head produced by the linear-probing stage (LP-FT only).
    pub lp_head: Option<Head>,
}

pub const CSV_HEADER: &str =
    "t,train_loss,l_id,l_ood,balancedness_drift,feature_drift_S,feature_drift_Sperp,terminal";

/// Fixed numeric format for exported files: 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

impl Trajectory {
    pub fn initial(&self) -> &Sample {
        &self.samples[0]
    }

    pub fn terminal(&self) -> &Sample {
        self.samples.last().expect("trajectory is never empty")
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.state.t)
    }

    fn fold_metric(&self, f: impl Fn(&Metrics) -> f64, init: f64, op: fn(f64, f64) -> f64) -> f64 {
        self.samples.iter().map(|s| f(&s.metrics)).fold(init, op)
    }

    pub fn min_l_ood(&self) -> f64 {
        self.fold_metric(|m| m.l_ood, f64::INFINITY, f64::min)
    }

    pub fn max_l_ood(&self) -> f64 {
        self.fold_metric(|m| m.l_ood, 0.0, f64::max)
    }

    pub fn max_balancedness_drift(&self) -> f64 {
        self.fold_metric(|m| m.balancedness_drift, 0.0, f64::max)
    }

    pub fn max_feature_drift_sperp(&self) -> f64 {
        self.fold_metric(|m| m.feature_drift_sperp, 0.0, f64::max)
    }

    /// Largest `||v(t) - v(0)||` and `||B(t) - B(0)||_F` over the samples.
    pub fn max_parameter_movement(&self) -> (f64, f64) {
        let init = &self.initial().state;
        self.samples.iter().fold((0.0, 0.0), |(dv, db), s| {
            (
                dv.max((s.state.v.vector() - init.v.vector()).norm()),
                db.max((s.state.b.matrix() - init.b.matrix()).norm()),
            )
        })
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        for s in &self.samples {
            let m = &s.metrics;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                fmt_f64(s.state.t),
                fmt_f64(m.train_loss),
                fmt_f64(m.l_id),
                fmt_f64(m.l_ood),
                fmt_f64(m.balancedness_drift),
                fmt_f64(m.feature_drift_s),
                fmt_f64(m.feature_drift_sperp),
                u8::from(s.terminal)
            )?;
        }
        Ok(())
    }
}

fn check_shapes(v: &Head, b: &DMatrix<f64>, d: usize) -> Result<()> {
    if b.ncols() != d {
        return Err(Error::ShapeMismatch {
            expected: (b.nrows(), d),
            got: b.shape(),
        });
    }
    if v.len() != b.nrows() {
        return Err(Error::ShapeMismatch {
            expected: (b.nrows(), 1),
            got: (v.len(), 1),
        });
    }
    Ok(())
}

fn residual(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    v: &DVector<f64>,
    b: &DMatrix<f64>,
) -> DVector<f64> {
    x * (b.transpose() * v) - y
}

/// `||X B^T v - Y||^2`.
pub fn train_loss(v: &Head, b: &FeatureExtractor, ts: &TrainingSet) -> Result<f64> {
    check_shapes(v, b.matrix(), ts.d())?;
    Ok(residual(&ts.x, &ts.y, v.vector(), b.matrix()).norm_squared())
}

/// Gradients of the training loss: `2 B X^T r` and `2 v (X^T r)^T` with
/// `r = X B^T v - Y`.
pub fn gradients(
    v: &Head,
    b: &FeatureExtractor,
    ts: &TrainingSet,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_shapes(v, b.matrix(), ts.d())?;
    let g = ts.x.transpose() * residual(&ts.x, &ts.y, v.vector(), b.matrix());
    Ok((b.matrix() * &g * 2.0, v.vector() * g.transpose() * 2.0))
}

fn parameter_error(v: &Head, b: &FeatureExtractor, inst: &ProblemInstance) -> Result<DVector<f64>> {
    check_shapes(v, b.matrix(), inst.d)?;
    if b.k() != inst.k {
        return Err(Error::ShapeMismatch {
            expected: (inst.k, inst.d),
            got: b.matrix().shape(),
        });
    }
    Ok(&inst.w_star - b.matrix().transpose() * v.vector())
}

/// `(w* - B^T v)^T Sigma (w* - B^T v)`.
pub fn ood_loss(v: &Head, b: &FeatureExtractor, inst: &ProblemInstance) -> Result<f64> {
    let e = parameter_error(v, b, inst)?;
    Ok(inst.sigma_ood.quadratic_form(&e).max(0.0))
}

/// `||F^T (w* - B^T v)||^2`, the ID loss under `z ~ N(0, I_m)`.
pub fn id_loss(v: &Head, b: &FeatureExtractor, inst: &ProblemInstance) -> Result<f64> {
    let e = parameter_error(v, b, inst)?;
    Ok((inst.id_basis.basis().transpose() * e).norm_squared())
}

/// Monte-Carlo ID loss for an arbitrary latent density: inputs are `F z`
/// with `z` drawn by `sample_latent`.
pub fn id_loss_monte_carlo<R, S>(
    v: &Head,
    b: &FeatureExtractor,
    inst: &ProblemInstance,
    n_samples: usize,
    rng: &mut R,
    mut sample_latent: S,
) -> Result<(f64, f64)>
where
    R: Rng + ?Sized,
    S: FnMut(&mut R) -> DVector<f64>,
{
    let e = parameter_error(v, b, inst)?;
    let projected = inst.id_basis.basis().transpose() * e;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n_samples {
        let z = sample_latent(rng);
        let val = projected.dot(&z).powi(2);
        sum += val;
        sum_sq += val * val;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    Ok((mean, (var / n).sqrt()))
}

/// Unique minimizer of the training loss over `v` with `B0` frozen.
pub fn lp_solve_closed_form(b0: &FeatureExtractor, ts: &TrainingSet) -> Result<Head> {
    if b0.d() != ts.d() {
        return Err(Error::ShapeMismatch {
            expected: (b0.k(), ts.d()),
            got: b0.matrix().shape(),
        });
    }
    let features = &ts.x * b0.matrix().transpose();
    let svd = SVD::new(features, true, true);
    let s = &svd.singular_values;
    let (smax, smin) = (s.max(), s.min());
    // eigenvalues of B0 X^T X B0^T are squared singular values of X B0^T
    let ratio = if smax > 0.0 {
        (smin / smax).powi(2)
    } else {
        0.0
    };
    if !(ratio > 1e-12) {
        return Err(Error::SingularNormalEquations { ratio });
    }
    let v = svd
        .solve(&ts.y, 0.0)
        .map_err(|e| Error::InvalidArgument(e.into()))?;
    Head::new(v)
}

#[derive(Clone)]
struct Params {
    v: DVector<f64>,
    b: DMatrix<f64>,
}

impl Params {
    fn axpy(&self, h: f64, d: &Params) -> Params {
        Params {
            v: &self.v + &d.v * h,
            b: &self.b + &d.b * h,
        }
    }

    fn max_abs(&self) -> f64 {
        self.v.amax().max(self.b.amax())
    }

    fn finite(&self) -> bool {
        self.v.iter().all(|x| x.is_finite()) && all_finite(&self.b)
    }

    fn max_diff(&self, other: &Params) -> f64 {
        (&self.v - &other.v).amax().max((&self.b - &other.b).amax())
    }

    fn norm(&self) -> f64 {
        (self.v.norm_squared() + self.b.norm_squared()).sqrt()
    }
}

struct Dynamics<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    head_only: bool,
}

impl Dynamics<'_> {
    /// Negative gradient and the residual-weighted inputs `X^T r`.
    fn field(&self, p: &Params) -> (Params, DVector<f64>) {
        let g = self.x.transpose() * residual(self.x, self.y, &p.v, &p.b);
        let dv = &p.b * &g * -2.0;
        let db = if self.head_only {
            DMatrix::zeros(p.b.nrows(), p.b.ncols())
        } else {
            &p.v * g.transpose() * -2.0
        };
        (Params { v: dv, b: db }, g)
    }

    fn loss(&self, p: &Params) -> f64 {
        residual(self.x, self.y, &p.v, &p.b).norm_squared()
    }

    fn rk4(&self, p: &Params, h: f64, k1: &Params) -> Params {
        let k2 = self.field(&p.axpy(0.5 * h, k1)).0;
        let k3 = self.field(&p.axpy(0.5 * h, &k2)).0;
        let k4 = self.field(&p.axpy(h, &k3)).0;
        Params {
            v: &p.v + (&k1.v + &k2.v * 2.0 + &k3.v * 2.0 + &k4.v) * (h / 6.0),
            b: &p.b + (&k1.b + &k2.b * 2.0 + &k3.b * 2.0 + &k4.b) * (h / 6.0),
        }
    }

    fn euler(&self, p: &Params, h: f64) -> Params {
        p.axpy(h, &self.field(p).0)
    }
}

/// Integration scheme for fixed-step runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Rk4,
    Euler,
}

/// Head the flows start from: `v0`, or the LP solution for the `Lp` mode.
pub fn initial_head(inst: &ProblemInstance) -> Result<Head> {
    match &inst.v_init {
        HeadInit::Vector(h) => Ok(h.clone()),
        HeadInit::LpPending => lp_solve_closed_form(&inst.b_init, &inst.train),
    }
}

/// Fixed-step integration from `(v0, B0)` to `t_end`, returning `(v, B)`.
pub fn integrate_fixed_step(
    inst: &ProblemInstance,
    v0: &Head,
    head_only: bool,
    scheme: Scheme,
    h: f64,
    t_end: f64,
) -> Result<(Head, DMatrix<f64>)> {
    if !(h > 0.0) || !(t_end >= 0.0) {
        return Err(Error::InvalidArgument(
            "step and horizon must be positive".into(),
        ));
    }
    let dynamics = Dynamics {
        x: &inst.train.x,
        y: &inst.train.y,
        head_only,
    };
    let mut p = Params {
        v: v0.vector().clone(),
        b: inst.b_init.matrix().clone(),
    };
    let steps = (t_end / h).round() as usize;
    for i in 0..steps {
        p = match scheme {
            Scheme::Rk4 => {
                let k1 = dynamics.field(&p).0;
                dynamics.rk4(&p, h, &k1)
            }
            Scheme::Euler => dynamics.euler(&p, h),
        };
        if !p.finite() {
            return Err(Error::NumericalBlowup {
                t: (i + 1) as f64 * h,
            });
        }
    }
    Ok((Head::new(p.v)?, p.b))
}

struct MetricContext<'a> {
    inst: &'a ProblemInstance,
    init_balance: DMatrix<f64>,
    b0: &'a DMatrix<f64>,
}

impl<'a> MetricContext<'a> {
    fn new(inst: &'a ProblemInstance, v0: &DVector<f64>) -> Self {
        let b0 = inst.b_init.matrix();
        Self {
            inst,
            init_balance: v0 * v0.transpose() - b0 * b0.transpose(),
            b0,
        }
    }

    fn metrics(&self, dynamics: &Dynamics, p: &Params) -> Metrics {
        let inst = self.inst;
        let e = &inst.w_star - p.b.transpose() * &p.v;
        let balance = &p.v * p.v.transpose() - &p.b * p.b.transpose();
        let shift = &p.b - self.b0;
        let max_col = |m: DMatrix<f64>| m.column_iter().map(|c| c.norm()).fold(0.0_f64, f64::max);
        Metrics {
            train_loss: dynamics.loss(p),
            l_id: (inst.id_basis.basis().transpose() * &e).norm_squared(),
            l_ood: inst.sigma_ood.quadratic_form(&e).max(0.0),
            balancedness_drift: (balance - &self.init_balance).norm(),
            feature_drift_s: max_col(&shift * inst.train.span.basis()),
            feature_drift_sperp: max_col(&shift * inst.span_perp.basis()),
        }
    }

    fn sample(&self, dynamics: &Dynamics, t: f64, p: &Params, terminal: bool) -> Result<Sample> {
        Ok(Sample {
            state: FlowState {
                t,
                v: Head::new(p.v.clone())?,
                b: FeatureExtractor::new(p.b.clone())?,
            },
            metrics: self.metrics(dynamics, p),
            terminal,
        })
    }
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 || lo >= hi {
        return vec![hi];
    }
    let (a, b) = (lo.ln(), hi.ln());
    let mut grid: Vec<f64> = (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect();
    grid[n - 1] = hi;
    grid
}

/// Upper bound on the largest Hessian eigenvalue of the loss at `p`.
fn curvature_bound(sigma_max_sq: f64, p: &Params, g: &DVector<f64>, head_only: bool) -> f64 {
    let b_sq = spectral_norm(&p.b).powi(2);
    if head_only {
        2.0 * sigma_max_sq * b_sq
    } else {
        2.0 * sigma_max_sq * (b_sq + p.v.norm_squared()) + 2.0 * g.norm()
    }
}

fn integrate(
    inst: &ProblemInstance,
    v0: Head,
    method: Method,
    cfg: &IntegratorConfig,
    lp_head: Option<Head>,
) -> Result<Trajectory> {
    cfg.validate()?;
    let head_only = method == Method::LinearProbing;
    let dynamics = Dynamics {
        x: &inst.train.x,
        y: &inst.train.y,
        head_only,
    };
    let sigma_max_sq = spectral_norm(&inst.train.x).powi(2);
    let h0 = cfg.initial_step.unwrap_or(1e-3 / sigma_max_sq);
    let ctx = MetricContext::new(inst, v0.vector());

    let mut p = Params {
        v: v0.into_vector(),
        b: inst.b_init.matrix().clone(),
    };
    let mut t = 0.0;
    let mut samples = vec![ctx.sample(&dynamics, t, &p, false)?];
    let loss0 = samples[0].metrics.train_loss;
    let (mut field, mut g) = dynamics.field(&p);
    let grad0 = field.norm();
    let y_norm = inst.train.y.norm();
    let loss_floor = 1e-28 * (1.0 + y_norm * y_norm);
    let is_converged = |loss: f64, grad: f64| {
        loss <= cfg.loss_tol * loss0 || grad <= cfg.loss_tol * grad0 || loss <= loss_floor
    };

    let grid = log_grid(h0, cfg.t_max, cfg.n_samples);
    let mut next = 0;
    let mut h = h0;
    let mut loss = loss0;
    let mut steps = 0;
    let mut rejections = 0;
    let stop_reason;

    if cfg.min_time == 0.0 && is_converged(loss, grad0) {
        stop_reason = StopReason::Converged;
    } else {
        loop {
            if t >= cfg.t_max {
                stop_reason = StopReason::TimeLimit;
                break;
            }
            let stable = 2.5 / curvature_bound(sigma_max_sq, &p, &g, head_only);
            let target = grid[next];
            let mut h_try = h.min(stable);
            let hits_grid = h_try >= target - t;
            if hits_grid {
                h_try = target - t;
            }

            let full = dynamics.rk4(&p, h_try, &field);
            let mid = dynamics.rk4(&p, 0.5 * h_try, &field);
            let (mid_field, _) = dynamics.field(&mid);
            let cand = dynamics.rk4(&mid, 0.5 * h_try, &mid_field);
            if !cand.finite() || !full.finite() {
                return Err(Error::NumericalBlowup { t: t + h_try });
            }
            let err = cand.max_diff(&full) / 15.0;
            let tol = cfg.local_error_tol * (1.0 + p.max_abs());
            let cand_loss = dynamics.loss(&cand);
            // evaluation roundoff of ||r||^2 is about 2 ||r|| ||dr|| with ||dr|| ~ eps ||Y||
            let slack = 64.0 * f64::EPSILON * loss.sqrt() * y_norm + loss_floor;
            let loss_up = cand_loss > loss + slack;
            if err > tol || loss_up {
                rejections += 1;
                if rejections > cfg.max_halvings || h_try <= 1e-15 * t.max(h0) {
                    stop_reason = StopReason::Stalled;
                    break;
                }
                h = if loss_up {
                    0.5 * h_try
                } else {
                    h_try * (0.9 * (tol / err).powf(0.2)).clamp(0.1, 0.5)
                };
                continue;
            }

            rejections = 0;
            steps += 1;
            t = if hits_grid { target } else { t + h_try };
            p = cand;
            loss = cand_loss;
            (field, g) = dynamics.field(&p);
            let growth = if err > 0.0 {
                (0.9 * (tol / err).powf(0.2)).clamp(1.0, 4.0)
            } else {
                4.0
            };
            if !hits_grid || h_try >= h {
                h = h_try * growth;
            }
            if hits_grid {
                samples.push(ctx.sample(&dynamics, t, &p, false)?);
                while next < grid.len() && grid[next] <= t {
                    next += 1;
                }
                if next == grid.len() {
                    stop_reason = StopReason::TimeLimit;
                    break;
                }
            }
            if t >= cfg.min_time && is_converged(loss, field.norm()) {
                stop_reason = StopReason::Converged;
                break;
            }
        }
    }

    let last = samples.last_mut().expect("initial sample");
    if last.state.t == t {
        last.terminal = true;
    } else {
        samples.push(ctx.sample(&dynamics, t, &p, true)?);
    }
    Ok(Trajectory {
        method,
        samples,
        converged: stop_reason == StopReason::Converged,
        stop_reason,
        steps,
        lp_head,
    })
}

/// Fine-tuning flow from `(v0, B0)`. An `Lp` head mode starts from the
/// linear-probing solution, i.e. behaves like [`run_lpft`].
pub fn integrate_fine_tuning(inst: &ProblemInstance, cfg: &IntegratorConfig) -> Result<Trajectory> {
    if matches!(inst.v_init, HeadInit::LpPending) {
        return run_lpft(inst, cfg);
    }
    integrate(inst, initial_head(inst)?, Method::FineTuning, cfg, None)
}

/// Linear-probing flow: only the head moves.
pub fn lp_flow(inst: &ProblemInstance, cfg: &IntegratorConfig) -> Result<Trajectory> {
    integrate(inst, initial_head(inst)?, Method::LinearProbing, cfg, None)
}

/// LP-FT: fine-tuning started from the closed-form linear-probing head.
pub fn run_lpft(inst: &ProblemInstance, cfg: &IntegratorConfig) -> Result<Trajectory> {
    let v_lp = lp_solve_closed_form(&inst.b_init, &inst.train)?;
    integrate(inst, v_lp.clone(), Method::LpFt, cfg, Some(v_lp))
}

pub fn run_method(
    inst: &ProblemInstance,
    method: Method,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    match method {
        Method::FineTuning => integrate_fine_tuning(inst, cfg),
        Method::LinearProbing => lp_flow(inst, cfg),
        Method::LpFt => run_lpft(inst, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{build_instance, InstanceConfig, SigmaMode};

    fn tiny() -> TrainingSet {
        TrainingSet::new(
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DVector::from_vec(vec![1.0]),
        )
        .unwrap()
    }

    fn unit_b() -> FeatureExtractor {
        FeatureExtractor::with_orthonormal_rows(DMatrix::from_row_slice(1, 2, &[1.0, 0.0])).unwrap()
    }

    #[test]
    fn hand_evaluated_loss_and_gradients() {
        let v = Head::from_slice(&[2.0]).unwrap();
        assert_eq!(train_loss(&v, &unit_b(), &tiny()).unwrap(), 1.0);
        let (gv, gb) = gradients(&v, &unit_b(), &tiny()).unwrap();
        assert_eq!(gv.as_slice(), &[2.0]);
        assert_eq!(gb, DMatrix::from_row_slice(1, 2, &[4.0, 0.0]));
    }

    #[test]
    fn loss_is_homogeneous_in_labels() {
        let ts = tiny();
        let doubled = TrainingSet::new(ts.x.clone(), &ts.y * 2.0).unwrap();
        let zero = Head::zeros(1);
        let a = train_loss(&zero, &unit_b(), &ts).unwrap();
        let b = train_loss(&zero, &unit_b(), &doubled).unwrap();
        assert_eq!(b, 4.0 * a);
    }

    #[test]
    fn shape_errors() {
        let v = Head::from_slice(&[1.0, 2.0]).unwrap();
        assert!(matches!(
            train_loss(&v, &unit_b(), &tiny()),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(matches!(
            gradients(&v, &unit_b(), &tiny()),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn optimum_has_zero_loss_and_gradient() {
        let inst = build_instance(&InstanceConfig {
            seed: 3,
            ..Default::default()
        })
        .unwrap();
        assert!(train_loss(&inst.v_star, &inst.b_star, &inst.train).unwrap() < 1e-24);
        let (gv, gb) = gradients(&inst.v_star, &inst.b_star, &inst.train).unwrap();
        assert!(gv.amax() < 1e-10 && gb.amax() < 1e-10);
        assert!(ood_loss(&inst.v_star, &inst.b_star, &inst).unwrap() < 1e-28);
        assert!(id_loss(&inst.v_star, &inst.b_star, &inst).unwrap() < 1e-28);
    }

    #[test]
    fn extractor_gradient_annihilates_perp_directions() {
        let inst = build_instance(&InstanceConfig {
            seed: 4,
            ..Default::default()
        })
        .unwrap();
        let (_, gb) = gradients(&inst.v_star, &inst.b_init, &inst.train).unwrap();
        let leak = &gb * inst.span_perp.basis();
        assert!(leak.amax() < 1e-12 * (1.0 + gb.amax()));
    }

    #[test]
    fn ood_loss_examples() {
        let mut inst = build_instance(&InstanceConfig {
            d: 20,
            k: 2,
            m: 5,
            n: 10,
            seed: 1,
            ..Default::default()
        })
        .unwrap();
        let v = Head::zeros(2);
        let l = ood_loss(&v, &inst.b_init, &inst).unwrap();
        assert!((l - inst.w_star.norm_squared()).abs() < 1e-14);

        // direct quadratic form with Sigma = diag(1, 4, 1, ...) and error (1, 1, 0, ...)
        let mut entries = vec![1.0; 20];
        entries[1] = 4.0;
        inst.sigma_ood =
            crate::problem::make_ood_second_moment(20, &SigmaMode::Diagonal { entries }).unwrap();
        inst.w_star = DVector::zeros(20);
        inst.w_star[0] = 1.0;
        inst.w_star[1] = 1.0;
        assert!((ood_loss(&v, &inst.b_init, &inst).unwrap() - 5.0).abs() < 1e-14);
    }

    #[test]
    fn id_loss_ignores_errors_outside_id_subspace() {
        let mut inst = build_instance(&InstanceConfig {
            seed: 8,
            ..Default::default()
        })
        .unwrap();
        inst.w_star = inst.span_perp.basis().column(0).into_owned();
        let v = Head::zeros(inst.k);
        assert!(id_loss(&v, &inst.b_init, &inst).unwrap() < 1e-28);
        assert!(ood_loss(&v, &inst.b_init, &inst).unwrap() > 0.5);
    }

    #[test]
    fn closed_form_lp_recovers_rotated_truth() {
        let inst = build_instance(&InstanceConfig {
            eps: 0.0,
            seed: 2,
            ..Default::default()
        })
        .unwrap();
        let v = lp_solve_closed_form(&inst.b_star, &inst.train).unwrap();
        assert!((v.vector() - inst.v_star.vector()).amax() < 1e-10);

        let mut rng = crate::rng::rng_from_seed(5);
        let u = crate::subspace::Rotation::random(inst.k, &mut rng);
        let rotated =
            FeatureExtractor::with_orthonormal_rows(u.matrix() * inst.b_star.matrix()).unwrap();
        let v = lp_solve_closed_form(&rotated, &inst.train).unwrap();
        assert!((v.vector() - u.matrix() * inst.v_star.vector()).amax() < 1e-10);
        assert!((rotated.matrix().transpose() * v.vector() - &inst.w_star).amax() < 1e-10);
    }

    #[test]
    fn closed_form_lp_detects_singular_system() {
        // B0 orthogonal to the data: X B0^T = 0
        let ts = tiny();
        let b0 =
            FeatureExtractor::with_orthonormal_rows(DMatrix::from_row_slice(1, 2, &[0.0, 1.0]))
                .unwrap();
        assert!(matches!(
            lp_solve_closed_form(&b0, &ts),
            Err(Error::SingularNormalEquations { .. })
        ));
    }

    #[test]
    fn flow_at_optimum_is_constant() {
        let mut inst = build_instance(&InstanceConfig {
            eps: 0.0,
            seed: 6,
            ..Default::default()
        })
        .unwrap();
        inst.v_init = HeadInit::Vector(inst.v_star.clone());
        let traj = integrate_fine_tuning(&inst, &IntegratorConfig::default()).unwrap();
        assert!(traj.converged);
        assert_eq!(traj.samples.len(), 1);
        assert!(traj.samples[0].terminal);
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(1e-3, 1e3, 7);
        assert_eq!(g.len(), 7);
        assert!((g[0] - 1e-3).abs() < 1e-15);
        assert_eq!(g[6], 1e3);
        assert!((g[3] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_layout() {
        let inst = build_instance(&InstanceConfig {
            seed: 7,
            ..Default::default()
        })
        .unwrap();
        let traj = lp_flow(&inst, &IntegratorConfig::default()).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), traj.samples.len() + 1);
        assert!(lines.last().unwrap().ends_with(",1"));
        assert_eq!(lines[1].split(',').count(), 8);
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
    }
}
