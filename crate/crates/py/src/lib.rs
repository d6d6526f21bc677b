//! Python bindings: `import abdnet`.

use std::path::PathBuf;

use abd_core::dynamics::{aba_forward_dynamics, crba_oracle_dynamics, dyncheck, mass_scaled, JointState};
use abd_core::envs::{self, EnvSpec, EnvState};
use abd_core::learn::{
    eval_retention, ppo_train, regress_dynamics, Precision, RegressConfig, TrainConfig, TrainOptions,
};
use abd_core::morphology::{load_tree, parse_native, MorphologyDoc};
use abd_core::nets::checkpoint;
use abd_core::nets::{flops_count, instrumented_flops, predict, ActorKind, NetSpec, Params};
use abd_core::spatial::Vec3;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::Value;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(a) => {
            let items = a.iter().map(|x| to_py(py, x)).collect::<PyResult<Vec<_>>>()?;
            PyList::new(py, items)?.into_any()
        }
        Value::Object(o) => {
            let d = PyDict::new(py);
            for (k, x) in o {
                d.set_item(k, to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

fn json<'py>(py: Python<'py>, v: impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &serde_json::to_value(v).map_err(err)?)
}

fn kind(s: &str) -> PyResult<ActorKind> {
    s.parse().map_err(PyValueError::new_err)
}

fn parse_config<C: serde::de::DeserializeOwned + Default>(text: Option<&str>) -> PyResult<C> {
    match text {
        None => Ok(C::default()),
        Some(t) => serde_json::from_str(t).map_err(|e| PyValueError::new_err(e.to_string())),
    }
}

/// A kinematic tree with exact forward dynamics.
#[pyclass(name = "KinematicTree", module = "abdnet", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyTree {
    inner: abd_core::morphology::KinematicTree,
}

#[pymethods]
impl PyTree {
    /// Parse a native JSON morphology document.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let doc = MorphologyDoc::from_json(text).map_err(err)?;
        Ok(Self {
            inner: parse_native(&doc).map_err(err)?,
        })
    }

    /// Load a native JSON or URDF file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: load_tree(&path).map_err(err)?,
        })
    }

    #[getter]
    fn num_links(&self) -> usize {
        self.inner.num_links()
    }

    #[getter]
    fn dof(&self) -> usize {
        self.inner.dof()
    }

    #[getter]
    fn link_names(&self) -> Vec<String> {
        self.inner.links().iter().map(|l| l.name.clone()).collect()
    }

    fn content_hash(&self) -> String {
        self.inner.content_hash()
    }

    /// Joint accelerations from the Articulated Body Algorithm.
    #[pyo3(signature = (q, qd, tau, gravity = (0.0, 0.0, -9.81)))]
    fn forward_dynamics(&self, q: Vec<f64>, qd: Vec<f64>, tau: Vec<f64>, gravity: (f64, f64, f64)) -> PyResult<Vec<f64>> {
        let g = Vec3::new(gravity.0, gravity.1, gravity.2);
        aba_forward_dynamics(&self.inner, &JointState::new(q, qd), &tau, g).map_err(err)
    }

    /// Joint accelerations through the mass-matrix route.
    #[pyo3(signature = (q, qd, tau, gravity = (0.0, 0.0, -9.81)))]
    fn oracle_dynamics(&self, q: Vec<f64>, qd: Vec<f64>, tau: Vec<f64>, gravity: (f64, f64, f64)) -> PyResult<Vec<f64>> {
        let g = Vec3::new(gravity.0, gravity.1, gravity.2);
        crba_oracle_dynamics(&self.inner, &JointState::new(q, qd), &tau, g).map_err(err)
    }

    fn mass_scaled(&self, link: &str, factor: f64) -> PyResult<Self> {
        if !(factor > 0.0) {
            return Err(PyValueError::new_err("factor must be positive"));
        }
        Ok(Self {
            inner: mass_scaled(&self.inner, link, factor).map_err(err)?,
        })
    }

    /// Worst ABA-versus-oracle deviation over random states.
    #[pyo3(signature = (n_random = 200, seed = 0))]
    fn dyncheck<'py>(&self, py: Python<'py>, n_random: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
        let r = dyncheck(&self.inner, n_random, seed, Vec3::new(0.0, 0.0, -9.81)).map_err(err)?;
        json(py, r)
    }

    fn __repr__(&self) -> String {
        format!("KinematicTree(links={}, dof={})", self.inner.num_links(), self.inner.dof())
    }
}

/// A single environment with explicit resets.
#[pyclass(name = "Env", module = "abdnet")]
pub struct PyEnv {
    spec: EnvSpec,
    state: EnvState,
}

#[pymethods]
impl PyEnv {
    /// `name` is a preset name or the path of an environment JSON file.
    #[new]
    #[pyo3(signature = (name, seed = 0))]
    fn new(name: &str, seed: u64) -> PyResult<Self> {
        let spec = EnvSpec::resolve(name).map_err(err)?;
        let state = envs::reset(&spec, seed);
        Ok(Self { spec, state })
    }

    #[staticmethod]
    fn presets() -> Vec<&'static str> {
        envs::PRESETS.to_vec()
    }

    #[getter]
    fn name(&self) -> String {
        self.spec.name().to_string()
    }

    #[getter]
    fn obs_dim(&self) -> usize {
        self.spec.obs_dim()
    }

    #[getter]
    fn action_dim(&self) -> usize {
        self.spec.action_dim()
    }

    #[getter]
    fn torque_limit(&self) -> Vec<f64> {
        self.spec.torque_limit.clone()
    }

    #[getter]
    fn tree(&self) -> PyTree {
        PyTree {
            inner: self.spec.tree.clone(),
        }
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.state = envs::reset(&self.spec, seed);
        self.state.obs()
    }

    fn obs(&self) -> Vec<f64> {
        self.state.obs()
    }

    /// Apply joint torques; returns `(obs, reward, done, truncated)`.
    fn step(&mut self, action: Vec<f64>) -> PyResult<(Vec<f64>, f64, bool, bool)> {
        let (next, tr) = envs::step(&self.spec, &self.state, &action).map_err(err)?;
        self.state = next;
        Ok((tr.next_obs, tr.reward, tr.done, tr.truncated))
    }
}

/// A trained actor loaded from a checkpoint.
#[pyclass(name = "Policy", module = "abdnet", frozen)]
pub struct PyPolicy {
    manifest: checkpoint::CheckpointManifest,
    params: Params<f64>,
    torque_limit: Vec<f64>,
    tree: abd_core::morphology::KinematicTree,
}

#[pymethods]
impl PyPolicy {
    /// Load a checkpoint; `env` defaults to the one it was trained on.
    #[staticmethod]
    #[pyo3(signature = (path, env = None))]
    fn load(path: PathBuf, env: Option<&str>) -> PyResult<Self> {
        let (manifest, params) = checkpoint::load::<f64>(&path).map_err(err)?;
        let name = env
            .map(str::to_string)
            .or_else(|| manifest.env.clone())
            .ok_or_else(|| PyValueError::new_err("checkpoint names no environment"))?;
        let spec = EnvSpec::resolve(&name).map_err(err)?;
        manifest.check_tree(&spec.tree).map_err(err)?;
        let (actor, _) = checkpoint::split_critic(&params);
        Ok(Self {
            manifest,
            params: actor,
            torque_limit: spec.torque_limit.clone(),
            tree: spec.tree,
        })
    }

    #[getter]
    fn kind(&self) -> String {
        self.manifest.kind.to_string()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.manifest.net.param_count(&self.tree)
    }

    /// Mean action mapped to joint torques.
    fn act(&self, obs: Vec<f64>) -> PyResult<Vec<f64>> {
        let out = predict(&self.manifest.net, &self.tree, &self.params, &[obs]).map_err(err)?;
        Ok(out[0].iter().zip(&self.torque_limit).map(|(u, l)| u.clamp(-1.0, 1.0) * l).collect())
    }
}

/// Analytic and instrumented FLOPs of one forward pass.
#[pyfunction]
#[pyo3(signature = (tree, actor = "abdnet", d = 16, head_hidden = 32, obs_dim = None))]
fn flops<'py>(
    py: Python<'py>,
    tree: &PyTree,
    actor: &str,
    d: usize,
    head_hidden: usize,
    obs_dim: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let t = &tree.inner;
    let spec = NetSpec::policy(kind(actor)?, t, obs_dim.unwrap_or(2 * t.dof()).max(1), d, head_hidden);
    spec.validate(t).map_err(err)?;
    let analytic = flops_count(&spec, t);
    let instrumented = instrumented_flops(&spec, t).map_err(err)?;
    json(
        py,
        serde_json::json!({
            "analytic": analytic,
            "instrumented": instrumented,
            "param_count": spec.param_count(t),
        }),
    )
}

/// Train a policy with PPO. `config` is a JSON object string.
#[pyfunction]
#[pyo3(signature = (env, actor = "abdnet", config = None, out = None))]
fn train_policy<'py>(
    py: Python<'py>,
    env: &str,
    actor: &str,
    config: Option<&str>,
    out: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg: TrainConfig = parse_config(config)?;
    let spec = EnvSpec::resolve(env).map_err(err)?;
    let k = kind(actor)?;
    let opts = TrainOptions {
        out_dir: out.as_deref(),
        ..TrainOptions::default()
    };
    let summary = py.detach(|| -> Result<Value, abd_core::learn::LearnError> {
        let (best, last, random, metrics) = match cfg.precision {
            Precision::F32 => {
                let o = ppo_train::<f32>(k, &spec, &cfg, &opts)?;
                (o.best_eval, o.final_eval, o.random_return, o.metrics)
            }
            Precision::F64 => {
                let o = ppo_train::<f64>(k, &spec, &cfg, &opts)?;
                (o.best_eval, o.final_eval, o.random_return, o.metrics)
            }
        };
        Ok(serde_json::json!({
            "best_eval_return": best,
            "final_eval_return": last,
            "random_return": random,
            "metrics": metrics,
        }))
    });
    to_py(py, &summary.map_err(err)?)
}

/// Fit a dynamics model on random-policy transitions.
#[pyfunction]
#[pyo3(signature = (env, model = "abdnet", config = None))]
fn train_dynamics<'py>(py: Python<'py>, env: &str, model: &str, config: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
    let cfg: RegressConfig = parse_config(config)?;
    let spec = EnvSpec::resolve(env).map_err(err)?;
    let k = kind(model)?;
    let summary = py.detach(|| -> Result<Value, abd_core::learn::LearnError> {
        let (val, rollout, epochs, count) = match cfg.precision {
            Precision::F32 => {
                let o = regress_dynamics::<f32>(k, &spec, &cfg)?;
                (o.val_mse, o.rollout, o.epochs, o.param_count)
            }
            Precision::F64 => {
                let o = regress_dynamics::<f64>(k, &spec, &cfg)?;
                (o.val_mse, o.rollout, o.epochs, o.param_count)
            }
        };
        Ok(serde_json::json!({
            "val_mse": val,
            "rollout": rollout,
            "epochs": epochs,
            "param_count": count,
        }))
    });
    to_py(py, &summary.map_err(err)?)
}

/// Returns under base-link mass changes, relative to nominal.
#[pyfunction]
#[pyo3(signature = (ckpt, factors, episodes = 500, seed = 0, env = None))]
fn eval_shift<'py>(
    py: Python<'py>,
    ckpt: PathBuf,
    factors: Vec<f64>,
    episodes: usize,
    seed: u64,
    env: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    let (manifest, params) = checkpoint::load::<f64>(&ckpt).map_err(err)?;
    let name = env
        .map(str::to_string)
        .or_else(|| manifest.env.clone())
        .ok_or_else(|| PyValueError::new_err("checkpoint names no environment"))?;
    let spec = EnvSpec::resolve(&name).map_err(err)?;
    let report = py.detach(|| {
        if manifest.precision == "f32" {
            eval_retention(&manifest, &params.cast::<f32>(), &spec, &factors, episodes, seed)
        } else {
            eval_retention(&manifest, &params, &spec, &factors, episodes, seed)
        }
    });
    json(py, report.map_err(err)?)
}

#[pymodule]
fn abdnet(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyTree>()?;
    m.add_class::<PyEnv>()?;
    m.add_class::<PyPolicy>()?;
    m.add_function(wrap_pyfunction!(flops, m)?)?;
    m.add_function(wrap_pyfunction!(train_policy, m)?)?;
    m.add_function(wrap_pyfunction!(train_dynamics, m)?)?;
    m.add_function(wrap_pyfunction!(eval_shift, m)?)?;
    Ok(())
}
