//! Python bindings: claim laws, risk models and the three solvers.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use gs::montecarlo::{self, SimConfig};
use gs::network::{self, Mlp};
use gs::optimizer::LbfgsConfig;
use gs::pinn::{self, OptimizerChoice, ProblemSpec, TrainConfig};
use gs::{initial_value as iv, quadrature, volterra, ClaimDistribution, ErlangTerm, PenaltyCase, RiskModel};

fn err(e: gs::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn case(name: &str) -> PyResult<PenaltyCase> {
    PenaltyCase::from_name(name).ok_or_else(|| PyValueError::new_err(format!("unknown penalty case `{name}`")))
}

/// A mixed-Erlang claim-size law.
#[pyclass(name = "Claim", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyClaim(ClaimDistribution);

#[pymethods]
impl PyClaim {
    #[staticmethod]
    fn exponential(rate: f64) -> PyResult<Self> {
        ClaimDistribution::exponential(rate).map(Self).map_err(err)
    }

    #[staticmethod]
    fn erlang(shape: u32, rate: f64) -> PyResult<Self> {
        ClaimDistribution::erlang(shape, rate).map(Self).map_err(err)
    }

    #[staticmethod]
    fn combination() -> Self {
        Self(ClaimDistribution::combination_of_exponentials())
    }

    /// `terms` is a list of `(coef, shape, rate)`.
    #[staticmethod]
    fn mixture(terms: Vec<(f64, u32, f64)>) -> PyResult<Self> {
        let terms = terms.into_iter().map(|(c, k, r)| ErlangTerm::new(c, k, r)).collect();
        ClaimDistribution::new(terms).map(Self).map_err(err)
    }

    fn mean(&self) -> f64 {
        self.0.mean()
    }

    fn density(&self, x: f64) -> PyResult<f64> {
        self.0.density(x).map_err(err)
    }

    fn survival(&self, x: f64) -> PyResult<f64> {
        self.0.survival(x).map_err(err)
    }
}

#[pyclass(name = "RiskModel", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyRiskModel(RiskModel);

#[pymethods]
impl PyRiskModel {
    #[new]
    #[pyo3(signature = (claim, c = 1.5, lam = 1.0, r = 0.01, alpha = 0.0))]
    fn new(claim: &PyClaim, c: f64, lam: f64, r: f64, alpha: f64) -> PyResult<Self> {
        RiskModel::new(c, lam, r, alpha, claim.0.clone()).map(Self).map_err(err)
    }

    #[getter]
    fn c(&self) -> f64 {
        self.0.c
    }

    #[getter]
    fn lam(&self) -> f64 {
        self.0.lambda
    }

    #[getter]
    fn r(&self) -> f64 {
        self.0.r
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.0.alpha
    }

    fn __repr__(&self) -> String {
        format!("RiskModel(c={}, lam={}, r={}, alpha={})", self.0.c, self.0.lambda, self.0.r, self.0.alpha)
    }
}

/// A trained network plus its training summary.
#[pyclass(name = "Network", frozen)]
struct PyNetwork {
    net: Mlp,
    #[pyo3(get)]
    final_loss: f64,
    #[pyo3(get)]
    iterations: usize,
    #[pyo3(get)]
    converged: bool,
}

#[pymethods]
impl PyNetwork {
    fn __call__(&self, u: f64) -> f64 {
        self.net.forward(u)
    }

    fn derivative(&self, u: f64) -> f64 {
        self.net.forward_with_input_derivative(u).1
    }

    fn evaluate(&self, us: Vec<f64>) -> Vec<f64> {
        network::forward_batch(&self.net, &us)
    }

    fn to_text(&self) -> String {
        self.net.to_text()
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(Self {
            net: Mlp::from_text(text).map_err(err)?,
            final_loss: f64::NAN,
            iterations: 0,
            converged: false,
        })
    }

    fn param_count(&self) -> usize {
        self.net.params().len()
    }
}

/// Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1].
#[pyfunction]
fn gauss_legendre(n: usize) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let rule = quadrature::gauss_legendre(n).map_err(err)?;
    Ok((rule.nodes().to_vec(), rule.weights().to_vec()))
}

/// `(phi0, kappa)` for the unbarriered problem; needs `r > 0`.
#[pyfunction]
fn initial_value(model: &PyRiskModel, case_name: &str) -> PyResult<(f64, f64)> {
    let iv = iv::initial_value(&model.0, &case(case_name)?).map_err(err)?;
    Ok((iv.phi0, iv.kappa))
}

/// Volterra solution `(u, phi)` on `[0, u_max]`, or on `[0, barrier]`.
#[pyfunction]
#[pyo3(signature = (model, case_name, u_max = 30.0, n = 3000, barrier = None))]
fn solve_volterra(
    model: &PyRiskModel,
    case_name: &str,
    u_max: f64,
    n: usize,
    barrier: Option<f64>,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let case = case(case_name)?;
    let table = match barrier {
        Some(b) => volterra::solve_barrier(&model.0, &case, b, n),
        None => volterra::solve_no_barrier(&model.0, &case, u_max, n),
    }
    .map_err(err)?;
    let scale = table.log_scale.exp();
    Ok((table.u.clone(), table.phi.iter().map(|p| p * scale).collect()))
}

#[pyfunction]
#[pyo3(signature = (model, case_name, u_max = 30.0, barrier = None, seed = 0, max_iterations = 5000, residual_points = 256))]
#[allow(clippy::too_many_arguments)]
fn train_pinn(
    py: Python<'_>,
    model: &PyRiskModel,
    case_name: &str,
    u_max: f64,
    barrier: Option<f64>,
    seed: u64,
    max_iterations: usize,
    residual_points: usize,
) -> PyResult<PyNetwork> {
    let case = case(case_name)?;
    let spec = match barrier {
        Some(b) => ProblemSpec::barrier(model.0.clone(), case, b),
        None => ProblemSpec::no_barrier(model.0.clone(), case, u_max),
    }
    .map_err(err)?;
    let mut config = TrainConfig {
        seed,
        residual_points,
        ..TrainConfig::default()
    };
    if let OptimizerChoice::Lbfgs(cfg) = &mut config.optimizer {
        *cfg = LbfgsConfig { max_iterations, ..*cfg };
    }
    let out = py.detach(|| pinn::train(&spec, &config)).map_err(err)?;
    Ok(PyNetwork {
        net: out.network,
        final_loss: out.report.final_loss,
        iterations: out.report.iterations,
        converged: out.report.converged,
    })
}

/// Monte Carlo `(estimate, std_error)` at surplus `u0`.
#[pyfunction]
#[pyo3(signature = (model, case_name, u0, paths = 100_000, seed = 0, barrier = None))]
fn simulate(
    py: Python<'_>,
    model: &PyRiskModel,
    case_name: &str,
    u0: f64,
    paths: usize,
    seed: u64,
    barrier: Option<f64>,
) -> PyResult<(f64, f64)> {
    let case = case(case_name)?;
    let config = SimConfig {
        paths,
        seed,
        barrier,
        ..SimConfig::default()
    };
    let e = py.detach(|| montecarlo::estimate(&model.0, &case, u0, &config)).map_err(err)?;
    Ok((e.value, e.std_error))
}

#[pymodule]
fn gerber_shiu(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyClaim>()?;
    m.add_class::<PyRiskModel>()?;
    m.add_class::<PyNetwork>()?;
    m.add_function(wrap_pyfunction!(gauss_legendre, m)?)?;
    m.add_function(wrap_pyfunction!(initial_value, m)?)?;
    m.add_function(wrap_pyfunction!(solve_volterra, m)?)?;
    m.add_function(wrap_pyfunction!(train_pinn, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
