use std::collections::HashMap;
use std::ops::ControlFlow;
use std::sync::Arc;

use pyo3::exceptions::{PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use blobnet::cartpole::{self, CartPoleState};
use blobnet::pg_trainer::{self, CartPoleEnv, PolicyNet, TrainerConfig, Variant};
use blobnet::{Backend, Error, Handle, Net, SolverConfig};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::NotFound(_) | Error::DanglingHandle(_) => PyKeyError::new_err(e.to_string()),
        Error::InvalidState(_) | Error::DataStarvation(_) | Error::Io(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse_variant(name: &str) -> PyResult<Variant> {
    name.parse().map_err(to_py)
}

/// Parses model text and returns its canonical form.
#[pyfunction]
fn format_prototxt(text: &str) -> PyResult<String> {
    let nodes = blobnet::prototxt::parse_nodes(text).map_err(to_py)?;
    Ok(blobnet::prototxt::print_nodes(&nodes))
}

/// Layer names of a model, in order.
#[pyfunction]
fn layer_names(text: &str) -> PyResult<Vec<String>> {
    let def = blobnet::prototxt::parse(text).map_err(to_py)?;
    Ok(def.layers.into_iter().map(|l| l.name).collect())
}

#[pyfunction]
fn cartpole_reset(seed: u64) -> [f64; 4] {
    cartpole::reset(&mut ChaCha8Rng::seed_from_u64(seed)).to_array()
}

/// One Euler step; returns (state, reward, done).
#[pyfunction]
fn cartpole_step(state: [f64; 4], action: usize) -> PyResult<([f64; 4], f64, bool)> {
    let r = cartpole::step(&CartPoleState::from_array(state), action).map_err(to_py)?;
    Ok((r.state.to_array(), r.reward, r.done))
}

#[pyfunction]
#[pyo3(signature = (rewards, gamma, normalize=true))]
fn discount_rewards(rewards: Vec<f64>, gamma: f64, normalize: bool) -> PyResult<Vec<f64>> {
    pg_trainer::discount_rewards(&rewards, gamma, normalize).map_err(to_py)
}

#[pyfunction]
fn dlogps_sigmoid(action: usize, aprob: f64) -> f64 {
    pg_trainer::dlogps_sigmoid(action, aprob)
}

#[pyfunction]
fn dlogps_softmax(probs: Vec<f64>, action: usize) -> PyResult<Vec<f64>> {
    pg_trainer::dlogps_softmax(&probs, action).map_err(to_py)
}

/// Handle registry with dispatchable kernels. Buffers are named by id.
#[pyclass(name = "Backend")]
struct PyBackend {
    inner: Arc<Backend>,
    handles: HashMap<u64, Handle>,
}

impl PyBackend {
    fn handle(&self, id: u64) -> PyResult<Handle> {
        self.handles
            .get(&id)
            .copied()
            .ok_or_else(|| PyKeyError::new_err(format!("no live handle {id}")))
    }
}

#[pymethods]
impl PyBackend {
    #[new]
    fn new() -> Self {
        PyBackend {
            inner: Arc::new(Backend::new()),
            handles: HashMap::new(),
        }
    }

    /// Allocates a buffer holding `values`; returns its id.
    fn alloc(&mut self, values: Vec<f64>) -> PyResult<u64> {
        let h = self.inner.alloc_buffer(values.len()).map_err(to_py)?;
        self.inner.write(h, &values).map_err(to_py)?;
        self.handles.insert(h.id(), h);
        Ok(h.id())
    }

    fn create_rng(&mut self, seed: u64) -> u64 {
        let h = self.inner.create_rng(seed);
        self.handles.insert(h.id(), h);
        h.id()
    }

    fn read(&self, id: u64) -> PyResult<Vec<f64>> {
        self.inner.read(self.handle(id)?).map_err(to_py)
    }

    fn free(&mut self, id: u64) -> PyResult<()> {
        self.inner.free(self.handle(id)?).map_err(to_py)?;
        self.handles.remove(&id);
        Ok(())
    }

    fn live_count(&self) -> usize {
        self.inner.live_count()
    }

    /// Runs kernel `index`; handle parameters are passed as their ids.
    fn dispatch(&self, index: u32, params: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.dispatch(index, &params).map_err(to_py)
    }
}

/// A policy network bound to Cart-Pole.
#[pyclass(name = "Policy", unsendable)]
struct PyPolicy {
    inner: PolicyNet,
}

#[pymethods]
impl PyPolicy {
    /// Builds `model` (prototxt text) or the shipped model for `variant`.
    #[new]
    #[pyo3(signature = (variant="sigmoid", model=None, seed=0))]
    fn new(variant: &str, model: Option<&str>, seed: u64) -> PyResult<Self> {
        let v = parse_variant(variant)?;
        let text = model.unwrap_or(match v {
            Variant::Sigmoid => blobnet::cli::SIGMOID_MODEL,
            Variant::Softmax => blobnet::cli::SOFTMAX_MODEL,
        });
        let def = blobnet::prototxt::parse(text).map_err(to_py)?;
        let backend = Arc::new(Backend::new());
        let net = Net::build(&def, &backend, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(to_py)?;
        Ok(PyPolicy {
            inner: PolicyNet::new(net, v).map_err(to_py)?,
        })
    }

    #[getter]
    fn variant(&self) -> &'static str {
        self.inner.variant().as_str()
    }

    fn probabilities(&mut self, observation: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.probabilities(&observation).map_err(to_py)
    }

    /// Trains on Cart-Pole; returns the episode lengths.
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (episodes=1000, batch_episodes=10, gamma=0.99, lr=1e-3, normalize=true, seed=0))]
    fn train(
        &mut self,
        py: Python<'_>,
        episodes: usize,
        batch_episodes: usize,
        gamma: f64,
        lr: f64,
        normalize: bool,
        seed: u64,
    ) -> PyResult<Vec<usize>> {
        let cfg = TrainerConfig {
            variant: self.inner.variant(),
            gamma,
            episodes_per_batch: batch_episodes,
            normalize_returns: normalize,
            max_episodes: episodes,
            seed,
        };
        let solver = SolverConfig {
            learning_rate: lr,
            ..Default::default()
        };
        let mut interrupted = None;
        let stats = pg_trainer::train(&mut CartPoleEnv::default(), &mut self.inner, solver, &cfg, &mut |_| {
            match py.check_signals() {
                Ok(()) => ControlFlow::Continue(()),
                Err(e) => {
                    interrupted = Some(e);
                    ControlFlow::Break(())
                }
            }
        })
        .map_err(to_py)?;
        match interrupted {
            Some(e) => Err(e),
            None => Ok(stats.episode_lengths),
        }
    }

    /// Serialized weights.
    fn snapshot<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        let bytes = self.inner.net().snapshot_weights().map_err(to_py)?;
        Ok(PyBytes::new(py, &bytes))
    }

    fn __repr__(&self) -> String {
        format!("Policy(variant='{}')", self.inner.variant())
    }
}

#[pymodule]
fn blobnet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBackend>()?;
    m.add_class::<PyPolicy>()?;
    m.add_function(wrap_pyfunction!(format_prototxt, m)?)?;
    m.add_function(wrap_pyfunction!(layer_names, m)?)?;
    m.add_function(wrap_pyfunction!(cartpole_reset, m)?)?;
    m.add_function(wrap_pyfunction!(cartpole_step, m)?)?;
    m.add_function(wrap_pyfunction!(discount_rewards, m)?)?;
    m.add_function(wrap_pyfunction!(dlogps_sigmoid, m)?)?;
    m.add_function(wrap_pyfunction!(dlogps_softmax, m)?)?;
    Ok(())
}
