//! Python bindings: search spaces, configurations, Pareto utilities, the
//! synthetic and tabular backends, surrogate fitting and full searches.

use std::path::PathBuf;

use peftopt::gp::{self, FitOptions, GpModel};
use peftopt::objectives::{self, Backend, SyntheticLandscapeSpec, TabularBenchmark};
use peftopt::orchestrator::{self, RunConfig, RunState};
use peftopt::pareto::{self, ObjectiveVector};
use peftopt::space::{ConfigText, Configuration, SearchSpaceSpec};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: peftopt::Error) -> PyErr {
    use peftopt::Error::*;
    match e {
        InvalidSpace(_)
        | InvalidConfiguration(_)
        | Encoding(_)
        | Dimension { .. }
        | InvalidRun(_)
        | Parse { .. }
        | DuplicateKey { .. }
        | StateMismatch(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// A PEFT configuration: active layers (1-indexed) and three module sizes.
#[pyclass(name = "Config", frozen, eq, hash, from_py_object)]
#[derive(Clone, PartialEq, Eq, Hash)]
struct PyConfig {
    text: ConfigText,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (layers, d_sa, d_pa, l_pt))]
    fn new(layers: Vec<usize>, d_sa: u64, d_pa: u64, l_pt: u64) -> Self {
        let text = ConfigText {
            layers,
            d_sa,
            d_pa,
            l_pt,
        };
        let mut layers = text.layers.clone();
        layers.sort_unstable();
        layers.dedup();
        Self {
            text: ConfigText { layers, ..text },
        }
    }

    #[getter]
    fn layers(&self) -> Vec<usize> {
        self.text.layers.clone()
    }

    #[getter]
    fn d_sa(&self) -> u64 {
        self.text.d_sa
    }

    #[getter]
    fn d_pa(&self) -> u64 {
        self.text.d_pa
    }

    #[getter]
    fn l_pt(&self) -> u64 {
        self.text.l_pt
    }

    fn to_json(&self) -> String {
        self.text.canonical()
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let t: ConfigText = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Self::new(t.layers, t.d_sa, t.d_pa, t.l_pt))
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(layers={:?}, d_sa={}, d_pa={}, l_pt={})",
            self.text.layers, self.text.d_sa, self.text.d_pa, self.text.l_pt
        )
    }
}

impl PyConfig {
    fn from_config(c: &Configuration) -> Self {
        Self { text: c.to_text() }
    }
}

#[pyclass(name = "SearchSpace", frozen)]
struct PySearchSpace {
    spec: SearchSpaceSpec,
}

impl PySearchSpace {
    fn resolve(&self, c: &PyConfig) -> PyResult<Configuration> {
        self.spec.resolve(&c.text).map_err(to_py)
    }
}

#[pymethods]
impl PySearchSpace {
    #[new]
    #[pyo3(signature = (num_layers, hidden_dim, size_grid, base_param_count))]
    fn new(num_layers: usize, hidden_dim: u64, size_grid: Vec<u64>, base_param_count: u64) -> PyResult<Self> {
        let spec = SearchSpaceSpec::new(num_layers, hidden_dim, size_grid, base_param_count).map_err(to_py)?;
        Ok(Self { spec })
    }

    #[staticmethod]
    fn bert_base() -> Self {
        Self {
            spec: SearchSpaceSpec::bert_base(),
        }
    }

    #[staticmethod]
    fn bert_large() -> Self {
        Self {
            spec: SearchSpaceSpec::bert_large(),
        }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let spec: SearchSpaceSpec = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        spec.validate().map_err(to_py)?;
        Ok(Self { spec })
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.spec).expect("space serializes")
    }

    #[getter]
    fn num_layers(&self) -> usize {
        self.spec.num_layers
    }

    #[getter]
    fn hidden_dim(&self) -> u64 {
        self.spec.hidden_dim
    }

    #[getter]
    fn size_grid(&self) -> Vec<u64> {
        self.spec.size_grid.clone()
    }

    #[getter]
    fn base_param_count(&self) -> u64 {
        self.spec.base_param_count
    }

    fn cardinality(&self) -> u128 {
        self.spec.cardinality()
    }

    fn param_count(&self, config: &PyConfig) -> PyResult<u64> {
        self.spec.param_count(&self.resolve(config)?).map_err(to_py)
    }

    fn param_fraction(&self, config: &PyConfig) -> PyResult<f64> {
        self.spec.param_fraction(&self.resolve(config)?).map_err(to_py)
    }

    /// Weight count obtained by allocating every module.
    fn count_weights(&self, config: &PyConfig) -> PyResult<u64> {
        peftopt::peft::count_weights(&self.spec, &self.resolve(config)?).map_err(to_py)
    }

    fn encode(&self, config: &PyConfig) -> PyResult<Vec<f64>> {
        Ok(self.spec.encode(&self.resolve(config)?).map_err(to_py)?.coords)
    }

    fn decode(&self, coords: Vec<f64>) -> PyResult<PyConfig> {
        let c = self.spec.decode(&peftopt::EncodedPoint { coords }).map_err(to_py)?;
        Ok(PyConfig::from_config(&c))
    }

    fn index_of(&self, config: &PyConfig) -> PyResult<u128> {
        self.spec.index_of(&self.resolve(config)?).map_err(to_py)
    }

    fn config_at(&self, index: u128) -> PyResult<PyConfig> {
        Ok(PyConfig::from_config(&self.spec.config_at(index).map_err(to_py)?))
    }

    fn neighbors(&self, config: &PyConfig) -> PyResult<Vec<PyConfig>> {
        let c = self.resolve(config)?;
        Ok(self.spec.neighbors(&c).iter().map(PyConfig::from_config).collect())
    }

    fn sample(&self, seed: u64, n: usize) -> Vec<PyConfig> {
        self.spec
            .random_sample(seed, n)
            .iter()
            .map(PyConfig::from_config)
            .collect()
    }

    fn empty_config(&self) -> PyConfig {
        PyConfig::from_config(&self.spec.empty_config())
    }

    fn full_config(&self) -> PyConfig {
        PyConfig::from_config(&self.spec.full_config())
    }

    fn __repr__(&self) -> String {
        format!(
            "SearchSpace(num_layers={}, hidden_dim={}, levels={})",
            self.spec.num_layers,
            self.spec.hidden_dim,
            self.spec.levels()
        )
    }
}

/// Noisy synthetic accuracy landscape over a search space.
#[pyclass(name = "SyntheticLandscape", frozen)]
struct PyLandscape {
    space: SearchSpaceSpec,
    inner: objectives::SyntheticLandscape,
}

#[pymethods]
impl PyLandscape {
    #[new]
    #[pyo3(signature = (space, landscape_seed=0, noise_sd=0.2))]
    fn new(space: &PySearchSpace, landscape_seed: u64, noise_sd: f64) -> PyResult<Self> {
        let spec = SyntheticLandscapeSpec {
            noise_sd,
            ..SyntheticLandscapeSpec::with_seed(landscape_seed)
        };
        Ok(Self {
            space: space.spec.clone(),
            inner: spec.build(&space.spec).map_err(to_py)?,
        })
    }

    fn layer_weights(&self) -> Vec<f64> {
        self.inner.layer_weights().to_vec()
    }

    fn mean_score(&self, config: &PyConfig) -> PyResult<f64> {
        let c = self.space.resolve(&config.text).map_err(to_py)?;
        Ok(self.inner.mean_score(&c))
    }

    #[pyo3(signature = (config, fidelity=1.0, seed=0))]
    fn score(&self, config: &PyConfig, fidelity: f64, seed: u64) -> PyResult<f64> {
        let c = self.space.resolve(&config.text).map_err(to_py)?;
        self.inner
            .synthetic_score(&self.space, &c, fidelity, seed)
            .map_err(to_py)
    }
}

/// Precomputed scores loaded from a JSON-lines file.
#[pyclass(name = "TabularBenchmark", frozen)]
struct PyTabular {
    inner: TabularBenchmark,
}

#[pymethods]
impl PyTabular {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: objectives::load_tabular(path).map_err(to_py)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn lookup(&self, space: &PySearchSpace, config: &PyConfig) -> PyResult<Option<f64>> {
        let c = space.resolve(config)?;
        Ok(self.inner.get(&c).map(|(s, _)| s))
    }
}

/// Ensemble of fitted surrogate models, one per restart.
#[pyclass(name = "GpEnsemble", frozen)]
struct PyEnsemble {
    models: Vec<GpModel>,
}

#[pymethods]
impl PyEnsemble {
    fn __len__(&self) -> usize {
        self.models.len()
    }

    /// Per-member latent mean and variance at `point`.
    fn predict(&self, point: Vec<f64>) -> PyResult<Vec<(f64, f64)>> {
        self.models.iter().map(|m| m.predict(&point).map_err(to_py)).collect()
    }

    /// Per-member inverse squared lengthscales.
    fn inverse_lengthscales(&self) -> Vec<Vec<f64>> {
        self.models
            .iter()
            .map(|m| m.hyperparams().inv_sq_lengthscales())
            .collect()
    }

    /// Per-member `(outputscale, noise)` on the standardized scale.
    fn scales(&self) -> Vec<(f64, f64)> {
        self.models
            .iter()
            .map(|m| (m.hyperparams().outputscale(), m.hyperparams().noise()))
            .collect()
    }
}

#[pyfunction]
#[pyo3(signature = (points, values, restarts=8, steps=200, seed=0, fixed_noise=None))]
fn fit_gp(
    py: Python<'_>,
    points: Vec<Vec<f64>>,
    values: Vec<f64>,
    restarts: usize,
    steps: usize,
    seed: u64,
    fixed_noise: Option<f64>,
) -> PyResult<PyEnsemble> {
    let opts = FitOptions {
        restarts,
        steps,
        fixed_noise,
        ..FitOptions::default()
    };
    let models = py.detach(|| gp::fit(&points, &values, &opts, seed)).map_err(to_py)?;
    Ok(PyEnsemble { models })
}

fn objective(p: (f64, f64)) -> ObjectiveVector {
    ObjectiveVector::new(p.0, p.1)
}

/// `a` dominates `b`; points are `(score, cost)`.
#[pyfunction]
fn dominates(a: (f64, f64), b: (f64, f64)) -> bool {
    pareto::dominates(&objective(a), &objective(b))
}

/// Indices of the non-dominated `(score, cost)` points, by ascending cost.
#[pyfunction]
fn non_dominated(points: Vec<(f64, f64)>) -> Vec<usize> {
    let pts: Vec<ObjectiveVector> = points.into_iter().map(objective).collect();
    pareto::non_dominated_indices(&pts)
}

#[pyfunction]
fn hypervolume(points: Vec<(f64, f64)>, reference: (f64, f64)) -> f64 {
    let pts: Vec<ObjectiveVector> = points.into_iter().map(objective).collect();
    pareto::hypervolume(&pts, &objective(reference))
}

#[pyfunction]
fn nadir(points: Vec<(f64, f64)>) -> PyResult<(f64, f64)> {
    let pts: Vec<ObjectiveVector> = points.into_iter().map(objective).collect();
    let n = pareto::nadir(&pts).map_err(to_py)?;
    Ok((n.score, n.cost))
}

fn state_dict<'py>(py: Python<'py>, state: &RunState) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new(py);
    let observations = pyo3::types::PyList::empty(py);
    for t in &state.trials {
        let o = &t.observation;
        let d = PyDict::new(py);
        d.set_item("config", PyConfig::from_config(&o.config))?;
        d.set_item("score", o.score)?;
        d.set_item("cost", o.cost)?;
        d.set_item("fidelity", o.fidelity)?;
        d.set_item("seed", o.seed)?;
        d.set_item("iteration", t.iteration)?;
        d.set_item("wall_time_s", o.wall_time_s)?;
        observations.append(d)?;
    }
    let front: Vec<(PyConfig, f64, f64)> = state
        .front()
        .entries()
        .iter()
        .map(|e| (PyConfig::from_config(&e.config), e.objectives.score, e.objectives.cost))
        .collect();
    out.set_item("observations", observations)?;
    out.set_item("front", front)?;
    out.set_item("trajectory", state.trajectory.clone())?;
    Ok(out)
}

/// Run a search against a synthetic landscape or a tabular benchmark.
///
/// Returns a dict with `observations`, `front` and `trajectory`.
#[pyfunction]
#[pyo3(signature = (
    space, backend, seed=0, n_init=100, n_total=200, fidelity=0.05, batch_q=1,
    restarts=8, steps=200, mc_samples=128, refit_every=1, random=false, state_path=None,
))]
#[allow(clippy::too_many_arguments)]
fn search<'py>(
    py: Python<'py>,
    space: &PySearchSpace,
    backend: &Bound<'py, PyAny>,
    seed: u64,
    n_init: usize,
    n_total: usize,
    fidelity: f64,
    batch_q: usize,
    restarts: usize,
    steps: usize,
    mc_samples: usize,
    refit_every: usize,
    random: bool,
    state_path: Option<PathBuf>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut config = RunConfig::new(space.spec.clone(), seed);
    config.n_init = n_init;
    config.n_total = n_total;
    config.fidelity = fidelity;
    config.batch_q = batch_q;
    config.fit = FitOptions {
        restarts,
        steps,
        ..FitOptions::default()
    };
    config.mc_samples = mc_samples;
    config.refit_every = refit_every;
    config.state_path = state_path;
    let backend: Box<dyn Backend> = if let Ok(l) = backend.cast::<PyLandscape>() {
        Box::new(l.get().inner.clone())
    } else if let Ok(t) = backend.cast::<PyTabular>() {
        Box::new(t.get().inner.clone())
    } else {
        return Err(PyValueError::new_err(
            "backend must be a SyntheticLandscape or a TabularBenchmark",
        ));
    };
    let state = py
        .detach(|| {
            if random {
                orchestrator::random_search(&config, backend.as_ref())
            } else {
                orchestrator::run(&config, backend.as_ref())
            }
        })
        .map_err(to_py)?;
    state_dict(py, &state)
}

/// Load a state snapshot written by a search.
#[pyfunction]
fn load_state<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyDict>> {
    let (_, state) = orchestrator::load_state(&path).map_err(to_py)?;
    state_dict(py, &state)
}

#[pymodule(name = "peftopt")]
pub fn peftopt_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PySearchSpace>()?;
    m.add_class::<PyLandscape>()?;
    m.add_class::<PyTabular>()?;
    m.add_class::<PyEnsemble>()?;
    m.add_function(wrap_pyfunction!(fit_gp, m)?)?;
    m.add_function(wrap_pyfunction!(dominates, m)?)?;
    m.add_function(wrap_pyfunction!(non_dominated, m)?)?;
    m.add_function(wrap_pyfunction!(hypervolume, m)?)?;
    m.add_function(wrap_pyfunction!(nadir, m)?)?;
    m.add_function(wrap_pyfunction!(search, m)?)?;
    m.add_function(wrap_pyfunction!(load_state, m)?)?;
    Ok(())
}
