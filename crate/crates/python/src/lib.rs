//! Python bindings: instances, flows, subspace geometry and verification
//! suites. Matrices cross the boundary as lists of rows.

use std::collections::BTreeMap;

use fdlab_core::flow::{self, IntegratorConfig, Method};
use fdlab_core::harness::{self, VerificationConfig};
use fdlab_core::problem::{self, Head, HeadMode, SigmaMode};
use fdlab_core::report::{self, ResultId};
use fdlab_core::subspace::{self, FeatureExtractor};
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn core_err(e: fdlab_core::Error) -> PyErr {
    use fdlab_core::Error as E;
    match e {
        E::NumericalBlowup { .. }
        | E::SingularNormalEquations { .. }
        | E::TargetUnreachable { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
    let ncols = rows.first().map_or(0, Vec::len);
    if ncols == 0 {
        return Err("matrix must be non-empty".into());
    }
    if let Some(i) = rows.iter().position(|r| r.len() != ncols) {
        return Err(format!(
            "row {i} has {} entries, expected {ncols}",
            rows[i].len()
        ));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    matrix_from_rows(&rows).map_err(PyValueError::new_err)
}

fn extractor(rows: Vec<Vec<f64>>) -> PyResult<FeatureExtractor> {
    FeatureExtractor::new(matrix(rows)?).map_err(core_err)
}

pub fn parse_method(label: &str) -> Result<Method, String> {
    match label.to_ascii_uppercase().as_str() {
        "FT" => Ok(Method::FineTuning),
        "LP" => Ok(Method::LinearProbing),
        "LPFT" | "LP-FT" => Ok(Method::LpFt),
        _ => Err(format!(
            "unknown method `{label}` (expected FT, LP or LPFT)"
        )),
    }
}

#[pyclass(name = "InstanceConfig", module = "fdlab", skip_from_py_object)]
#[derive(Clone)]
struct PyInstanceConfig(problem::InstanceConfig);

#[pymethods]
impl PyInstanceConfig {
    /// `head` is "zero", "gaussian" (uses `head_sigma_sq`) or "lp";
    /// `sigma_diag` switches the OOD second moment from the identity to a diagonal.
    #[new]
    #[pyo3(signature = (d=100, k=5, m=20, n=40, eps=0.05, w_norm=1.0, seed=0, head="zero", head_sigma_sq=1.0, sigma_diag=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        d: usize,
        k: usize,
        m: usize,
        n: usize,
        eps: f64,
        w_norm: f64,
        seed: u64,
        head: &str,
        head_sigma_sq: f64,
        sigma_diag: Option<Vec<f64>>,
    ) -> PyResult<Self> {
        let head = match head {
            "zero" => HeadMode::Zero,
            "gaussian" => HeadMode::Gaussian {
                sigma_sq: head_sigma_sq,
            },
            "lp" => HeadMode::Lp,
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown head mode `{other}`"
                )))
            }
        };
        let sigma = sigma_diag.map_or(SigmaMode::Identity, |entries| SigmaMode::Diagonal {
            entries,
        });
        let cfg = problem::InstanceConfig {
            d,
            k,
            m,
            n,
            eps,
            w_norm,
            head,
            sigma,
            seed,
        };
        cfg.validate().map_err(core_err)?;
        Ok(Self(cfg))
    }

    #[getter]
    fn d(&self) -> usize {
        self.0.d
    }
    #[getter]
    fn k(&self) -> usize {
        self.0.k
    }
    #[getter]
    fn m(&self) -> usize {
        self.0.m
    }
    #[getter]
    fn n(&self) -> usize {
        self.0.n
    }
    #[getter]
    fn eps(&self) -> f64 {
        self.0.eps
    }
    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }

    /// `count` copies with seeds derived from `master`.
    fn battery(&self, master: u64, count: usize) -> Vec<PyInstanceConfig> {
        self.0
            .battery(master, count)
            .into_iter()
            .map(PyInstanceConfig)
            .collect()
    }

    fn build(&self, py: Python<'_>) -> PyResult<PyProblemInstance> {
        let cfg = self.0.clone();
        py.detach(move || problem::build_instance(&cfg))
            .map(PyProblemInstance)
            .map_err(core_err)
    }

    fn __repr__(&self) -> String {
        let c = &self.0;
        format!(
            "InstanceConfig(d={}, k={}, m={}, n={}, eps={}, seed={})",
            c.d, c.k, c.m, c.n, c.eps, c.seed
        )
    }
}

#[pyclass(name = "ProblemInstance", module = "fdlab")]
struct PyProblemInstance(problem::ProblemInstance);

#[pymethods]
impl PyProblemInstance {
    #[getter]
    fn d(&self) -> usize {
        self.0.d
    }
    #[getter]
    fn k(&self) -> usize {
        self.0.k
    }
    #[getter]
    fn m(&self) -> usize {
        self.0.m
    }
    #[getter]
    fn n(&self) -> usize {
        self.0.n
    }
    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }
    /// Measured distance between the pretrained and optimal extractors.
    #[getter]
    fn eps_measured(&self) -> f64 {
        self.0.eps_measured
    }
    #[getter]
    fn b_star(&self) -> Vec<Vec<f64>> {
        rows_of(self.0.b_star.matrix())
    }
    #[getter]
    fn b_init(&self) -> Vec<Vec<f64>> {
        rows_of(self.0.b_init.matrix())
    }
    #[getter]
    fn v_star(&self) -> Vec<f64> {
        self.0.v_star.vector().iter().copied().collect()
    }
    #[getter]
    fn w_star(&self) -> Vec<f64> {
        self.0.w_star.iter().copied().collect()
    }
    #[getter]
    fn x(&self) -> Vec<Vec<f64>> {
        rows_of(&self.0.train.x)
    }
    #[getter]
    fn y(&self) -> Vec<f64> {
        self.0.train.y.iter().copied().collect()
    }

    /// Population ID loss of the predictor `v^T B x`.
    fn id_loss(&self, v: Vec<f64>, b: Vec<Vec<f64>>) -> PyResult<f64> {
        let head = Head::new(DVector::from_vec(v)).map_err(core_err)?;
        flow::id_loss(&head, &extractor(b)?, &self.0).map_err(core_err)
    }

    /// Worst-case OOD loss of the predictor `v^T B x`.
    fn ood_loss(&self, v: Vec<f64>, b: Vec<Vec<f64>>) -> PyResult<f64> {
        let head = Head::new(DVector::from_vec(v)).map_err(core_err)?;
        flow::ood_loss(&head, &extractor(b)?, &self.0).map_err(core_err)
    }

    /// Integrates one training method ("FT", "LP" or "LPFT").
    #[pyo3(signature = (method, t_max=1e6, loss_tol=1e-12, n_samples=200, min_time=0.0))]
    fn run(
        &self,
        py: Python<'_>,
        method: &str,
        t_max: f64,
        loss_tol: f64,
        n_samples: usize,
        min_time: f64,
    ) -> PyResult<PyTrajectory> {
        let method = parse_method(method).map_err(PyValueError::new_err)?;
        let cfg = IntegratorConfig {
            t_max,
            loss_tol,
            n_samples,
            min_time,
            ..IntegratorConfig::default()
        };
        let inst = &self.0;
        py.detach(|| flow::run_method(inst, method, &cfg))
            .map(PyTrajectory)
            .map_err(core_err)
    }
}

#[pyclass(name = "Trajectory", module = "fdlab")]
struct PyTrajectory(flow::Trajectory);

#[pymethods]
impl PyTrajectory {
    #[getter]
    fn method(&self) -> &'static str {
        self.0.method.label()
    }
    #[getter]
    fn converged(&self) -> bool {
        self.0.converged
    }
    #[getter]
    fn stop_reason(&self) -> String {
        format!("{:?}", self.0.stop_reason)
    }
    #[getter]
    fn steps(&self) -> usize {
        self.0.steps
    }
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.0.times().collect()
    }
    #[getter]
    fn train_loss(&self) -> Vec<f64> {
        self.0
            .samples
            .iter()
            .map(|s| s.metrics.train_loss)
            .collect()
    }
    #[getter]
    fn l_id(&self) -> Vec<f64> {
        self.0.samples.iter().map(|s| s.metrics.l_id).collect()
    }
    #[getter]
    fn l_ood(&self) -> Vec<f64> {
        self.0.samples.iter().map(|s| s.metrics.l_ood).collect()
    }
    #[getter]
    fn head(&self) -> Vec<f64> {
        self.0.terminal().state.v.vector().iter().copied().collect()
    }
    #[getter]
    fn extractor(&self) -> Vec<Vec<f64>> {
        rows_of(self.0.terminal().state.b.matrix())
    }

    fn min_l_ood(&self) -> f64 {
        self.0.min_l_ood()
    }

    fn to_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.0
            .write_csv(&mut buf)
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        String::from_utf8(buf).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    fn __len__(&self) -> usize {
        self.0.samples.len()
    }
}

#[pyclass(name = "TheoremReport", module = "fdlab")]
struct PyTheoremReport(report::TheoremReport);

#[pymethods]
impl PyTheoremReport {
    #[getter]
    fn result_id(&self) -> &'static str {
        self.0.result_id.as_str()
    }
    #[getter]
    fn passed(&self) -> bool {
        self.0.pass
    }
    #[getter]
    fn assertable(&self) -> bool {
        self.0.is_assertable()
    }
    #[getter]
    fn quantities(&self) -> BTreeMap<String, f64> {
        self.0.quantities.clone()
    }
    #[getter]
    fn notes(&self) -> Vec<String> {
        self.0.notes.clone()
    }
    /// `(quantity, relation, threshold)` triples.
    #[getter]
    fn checks(&self) -> Vec<(String, String, f64)> {
        self.0
            .checks
            .iter()
            .map(|c| {
                let rel = match c.relation {
                    report::Relation::Le => "<=",
                    report::Relation::Lt => "<",
                    report::Relation::Ge => ">=",
                    report::Relation::Gt => ">",
                };
                (c.quantity.clone(), rel.to_string(), c.threshold)
            })
            .collect()
    }

    fn evaluate(&self) -> bool {
        self.0.evaluate()
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    fn __repr__(&self) -> String {
        format!(
            "TheoremReport({}, passed={})",
            self.0.result_id, self.0.pass
        )
    }
}

/// Cosine of the largest principal angle between the spans of two lists of
/// `d`-vectors (need not be orthonormal).
#[pyfunction]
fn principal_angle_cos(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
    let a = subspace::orthonormalize(&matrix(a)?.transpose()).map_err(core_err)?;
    let b = subspace::orthonormalize(&matrix(b)?.transpose()).map_err(core_err)?;
    let (small, large) = if a.dim() <= b.dim() { (a, b) } else { (b, a) };
    subspace::principal_angle_cos(&small, &large).map_err(core_err)
}

/// Rotation-aligned spectral distance between two `k x d` extractors with
/// orthonormal rows.
#[pyfunction]
fn extractor_distance(b: Vec<Vec<f64>>, other: Vec<Vec<f64>>) -> PyResult<f64> {
    let ortho = |rows| FeatureExtractor::with_orthonormal_rows(matrix(rows)?).map_err(core_err);
    let (dist, _) = subspace::extractor_distance(&ortho(b)?, &ortho(other)?).map_err(core_err)?;
    Ok(dist)
}

#[pyfunction]
fn result_ids() -> Vec<&'static str> {
    ResultId::ALL.iter().map(|id| id.as_str()).collect()
}

/// Runs one verification suite. `n_instances` and `n_mc_trials` shrink the
/// batteries for quick checks.
#[pyfunction]
#[pyo3(signature = (suite, seed=0, n_instances=None, n_mc_trials=None))]
fn verify(
    py: Python<'_>,
    suite: &str,
    seed: u64,
    n_instances: Option<usize>,
    n_mc_trials: Option<usize>,
) -> PyResult<PyTheoremReport> {
    let id: ResultId = suite.parse().map_err(core_err)?;
    let mut vcfg = VerificationConfig {
        seed,
        ..VerificationConfig::default()
    };
    if let Some(n) = n_instances {
        vcfg.n_instances = n;
    }
    if let Some(n) = n_mc_trials {
        vcfg.n_mc_trials = n;
    }
    py.detach(|| harness::run_suite(id, &vcfg, &IntegratorConfig::default()))
        .map(PyTheoremReport)
        .map_err(core_err)
}

#[pymodule]
fn fdlab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyInstanceConfig>()?;
    m.add_class::<PyProblemInstance>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_class::<PyTheoremReport>()?;
    m.add_function(wrap_pyfunction!(principal_angle_cos, m)?)?;
    m.add_function(wrap_pyfunction!(extractor_distance, m)?)?;
    m.add_function(wrap_pyfunction!(result_ids, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
