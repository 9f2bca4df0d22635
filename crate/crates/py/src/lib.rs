use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use acoe_core::agents::{evaluate as evaluate_policy, eval_episode_seed};
use acoe_core::attacks::{Adversary, AttackSpec};
use acoe_core::envs::EnvConfig;
use acoe_core::harness::{self, BundleFile, HarnessOptions, Suite, VerifyOptions};
use acoe_core::oracle::{self, ExactBelief, FinitePomdp};
use acoe_core::policy::Policy;
use acoe_core::{Action, ActionSpace, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::AttackSpec { .. } | Error::Json(_) | Error::Dimension { .. } => {
            PyValueError::new_err(e.to_string())
        }
        Error::Io(_) => PyOSError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: serde::de::DeserializeOwned>(py: Python<'_>, value: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = match value.extract::<String>() {
        Ok(s) => s,
        Err(_) => py.import("json")?.call_method1("dumps", (value,))?.extract()?,
    };
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn action_from_py(space: ActionSpace, value: &Bound<'_, PyAny>) -> PyResult<Action> {
    match space {
        ActionSpace::Discrete(_) => Ok(Action::Discrete(value.extract()?)),
        ActionSpace::Continuous(_) => Ok(Action::Continuous(value.extract()?)),
    }
}

fn action_to_py<'py>(py: Python<'py>, a: &Action) -> PyResult<Bound<'py, PyAny>> {
    match a {
        Action::Discrete(i) => Ok(i.into_pyobject(py)?.into_any()),
        Action::Continuous(v) => Ok(v.clone().into_pyobject(py)?.into_any()),
    }
}

/// Environment built from a config dict or JSON string.
#[pyclass(unsendable, name = "Env")]
struct PyEnv {
    config: EnvConfig,
    inner: Box<dyn acoe_core::envs::Env>,
}

#[pymethods]
impl PyEnv {
    #[new]
    fn new(py: Python<'_>, config: &Bound<'_, PyAny>) -> PyResult<Self> {
        let config: EnvConfig = from_py(py, config)?;
        let inner = config.build().map_err(py_err)?;
        Ok(Self { config, inner })
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.inner.name()
    }

    #[getter]
    fn obs_dim(&self) -> usize {
        self.inner.obs_dim()
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma()
    }

    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.config)
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.inner.reset(seed)
    }

    /// Returns (obs, reward, terminal, truncated).
    fn step(&mut self, action: &Bound<'_, PyAny>) -> PyResult<(Vec<f64>, f64, bool, bool)> {
        let a = action_from_py(self.inner.action_space(), action)?;
        let out = self.inner.step(&a).map_err(py_err)?;
        Ok((out.obs, out.reward, out.terminal, out.truncated))
    }

    fn reward_query(&self, state: Vec<f64>, action: &Bound<'_, PyAny>) -> PyResult<f64> {
        let a = action_from_py(self.inner.action_space(), action)?;
        self.inner.reward_query(&state, &a).map_err(py_err)
    }

    fn state(&self) -> Vec<f64> {
        self.inner.state()
    }
}

/// A trained agent loaded from a bundle file.
#[pyclass(unsendable, name = "Agent")]
struct PyAgent {
    bundle: BundleFile,
    policy: Arc<dyn Policy>,
}

#[pymethods]
impl PyAgent {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let bundle = BundleFile::load(&path).map_err(py_err)?;
        let policy = bundle.policy().map_err(py_err)?;
        Ok(Self { bundle, policy })
    }

    #[getter]
    fn label(&self) -> String {
        self.bundle.label.clone()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.bundle.seed
    }

    #[getter]
    fn lambda_(&self) -> f64 {
        self.bundle.lambda
    }

    fn env(&self) -> PyResult<PyEnv> {
        Ok(PyEnv {
            config: self.bundle.env.clone(),
            inner: self.bundle.env.build().map_err(py_err)?,
        })
    }

    fn act<'py>(&self, py: Python<'py>, obs: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
        action_to_py(py, &self.policy.greedy(&obs).map_err(py_err)?)
    }

    fn distribution<'py>(&self, py: Python<'py>, obs: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.policy.distribution(&obs).map_err(py_err)?)
    }

    /// Mean and sample std of greedy returns under `attack`.
    #[pyo3(signature = (attack="identity", episodes=10, seed=0))]
    fn evaluate(&self, attack: &str, episodes: usize, seed: u64) -> PyResult<(f64, f64)> {
        let mut env = self.bundle.env.build().map_err(py_err)?;
        let mut adv = Adversary::new(AttackSpec::parse(attack).map_err(py_err)?).map_err(py_err)?;
        let rep = evaluate_policy(self.policy.as_ref(), env.as_mut(), &mut adv, episodes, seed).map_err(py_err)?;
        Ok((rep.mean_return, rep.std_return))
    }

    /// Perturbed observation the attack produces for `obs` at the first
    /// step of an episode seeded by `seed`.
    #[pyo3(signature = (obs, attack, seed=0))]
    fn perturb(&self, obs: Vec<f64>, attack: &str, seed: u64) -> PyResult<Vec<f64>> {
        let mut env = self.bundle.env.build().map_err(py_err)?;
        let es = eval_episode_seed(seed, 0);
        env.reset(es);
        let mut adv = Adversary::new(AttackSpec::parse(attack).map_err(py_err)?).map_err(py_err)?;
        adv.begin_episode(env.horizon(), es);
        adv.perturb(self.policy.as_ref(), env.as_mut(), &obs).map_err(py_err)
    }
}

/// Finite POMDP for the exact oracle.
#[pyclass(name = "Pomdp")]
struct PyPomdp {
    inner: FinitePomdp,
}

#[pymethods]
impl PyPomdp {
    #[new]
    fn new(py: Python<'_>, spec: &Bound<'_, PyAny>) -> PyResult<Self> {
        let inner: FinitePomdp = from_py(py, spec)?;
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (n_states, n_actions, gamma, seed=0))]
    fn random(n_states: usize, n_actions: usize, gamma: f64, seed: u64) -> PyResult<Self> {
        let mut r = acoe_core::rng::stream(seed, "py-pomdp");
        Ok(Self {
            inner: oracle::random_instance(&mut r, n_states, n_actions, gamma).map_err(py_err)?,
        })
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.n_states()
    }

    #[getter]
    fn n_actions(&self) -> usize {
        self.inner.n_actions()
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }

    fn mdp_value(&self) -> Vec<f64> {
        oracle::mdp_value(&self.inner).values
    }

    /// Posterior of observation `o` under a uniform prior.
    fn posterior(&self, o: usize) -> PyResult<Vec<f64>> {
        Ok(self.inner.observation_posterior(o).map_err(py_err)?.0)
    }

    /// (U(o, b), δ(o, b)) with the default truncation horizon.
    fn belief_value(&self, o: usize, belief: Vec<f64>) -> PyResult<(f64, f64)> {
        let b = ExactBelief::new(belief).map_err(py_err)?;
        let h = oracle::horizon_for_slack(self.inner.gamma, 1e-9);
        let u = oracle::belief_value(&self.inner, o, &b, h).map_err(py_err)?;
        let d = oracle::delta_exact(&self.inner, o, &b, h).map_err(py_err)?;
        Ok((u.value, d.value))
    }

    fn xi(&self) -> f64 {
        oracle::xi_tv(&self.inner)
    }

    fn check_bound<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let c = oracle::check_theorem1(0, &self.inner, &Default::default()).map_err(py_err)?;
        to_py(py, &c)
    }
}

#[pyfunction]
fn tv_distance(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    oracle::tv_distance(&p, &q).map_err(py_err)
}

#[pyfunction]
fn w1_distance(p: Vec<f64>, q: Vec<f64>, positions: Vec<f64>) -> PyResult<f64> {
    oracle::w1_distance_1d(&p, &q, &positions).map_err(py_err)
}

/// Canonical label of an attack spec string.
#[pyfunction]
fn parse_attack<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &AttackSpec::parse(text).map_err(py_err)?)
}

/// Trains from a config file; returns the bundle paths.
#[pyfunction]
fn train(config: PathBuf, out: PathBuf) -> PyResult<Vec<PathBuf>> {
    Ok(harness::train(&config, &HarnessOptions::new(out)).map_err(py_err)?.bundles)
}

/// Runs a verification suite and returns its report as a dict.
#[pyfunction]
#[pyo3(signature = (suite="all", instances=None, seed=0))]
fn verify<'py>(py: Python<'py>, suite: &str, instances: Option<usize>, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let s: Suite = suite.parse().map_err(py_err)?;
    let mut opts = VerifyOptions {
        seed,
        ..Default::default()
    };
    if let Some(k) = instances {
        opts.thm1_instances = k;
        opts.thm2_instances = k;
        opts.prop1_instances = k;
    }
    let out = harness::run_verify(s, &opts).map_err(py_err)?;
    let d = to_py(py, &out)?;
    d.set_item("passed", out.passed())?;
    Ok(d)
}

#[pymodule]
fn acoe(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEnv>()?;
    m.add_class::<PyAgent>()?;
    m.add_class::<PyPomdp>()?;
    m.add_function(wrap_pyfunction!(tv_distance, m)?)?;
    m.add_function(wrap_pyfunction!(w1_distance, m)?)?;
    m.add_function(wrap_pyfunction!(parse_attack, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
