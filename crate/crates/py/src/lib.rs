//! Python bindings: a thin layer over the simulator and training harness.
//!
//! Structured data crosses the boundary as JSON strings so the Python side
//! stays dependency-free and artifacts match the CLI byte for byte.

use std::str::FromStr;
use std::sync::Arc;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use sdrlab::algos;
use sdrlab::env::{ActionKind, MaskMode, MdpConfig};
use sdrlab::harness;
use sdrlab::net::reference;
use sdrlab::terrain;
use sdrlab::{Action, Env, EnvState, GoalSet, HostAddress, NetworkConfig, PenaltyScale};

fn value_err<E: std::fmt::Display>(err: E) -> PyErr {
    PyValueError::new_err(err.to_string())
}

fn parse_address(text: &str) -> PyResult<HostAddress> {
    HostAddress::parse(text)
        .ok_or_else(|| PyValueError::new_err(format!("bad host address `{text}`, want `(s,h)`")))
}

fn parse_kind(text: &str) -> PyResult<ActionKind> {
    ActionKind::ALL
        .iter()
        .copied()
        .find(|k| k.as_str() == text)
        .ok_or_else(|| PyValueError::new_err(format!("unknown action kind `{text}`")))
}

fn parse_mask_mode(text: &str) -> PyResult<MaskMode> {
    match text {
        "reachable" => Ok(MaskMode::Reachable),
        "progressive" => Ok(MaskMode::Progressive),
        other => Err(PyValueError::new_err(format!("unknown mask mode `{other}`"))),
    }
}

/// An immutable network topology.
#[pyclass(frozen)]
struct Network {
    inner: Arc<NetworkConfig>,
}

#[pymethods]
impl Network {
    /// The built-in reference topology.
    #[staticmethod]
    fn reference() -> Network {
        Network { inner: Arc::new(reference::reference_network()) }
    }

    /// Parse and validate a network document.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Network> {
        let net = sdrlab::net::parse_network_config(text).map_err(value_err)?;
        Ok(Network { inner: Arc::new(net) })
    }

    fn to_json(&self) -> String {
        self.inner.to_canonical_json()
    }

    #[getter]
    fn num_hosts(&self) -> usize {
        self.inner.hosts.len()
    }

    #[getter]
    fn num_subnets(&self) -> usize {
        self.inner.subnets.len()
    }

    #[getter]
    fn total_services(&self) -> usize {
        self.inner.total_services()
    }

    fn hosts(&self) -> Vec<String> {
        self.inner.hosts.iter().map(|h| h.address.to_string()).collect()
    }

    /// `high`, `medium` or `low` for one host.
    fn risk_tier(&self, address: &str) -> PyResult<String> {
        let tier = self
            .inner
            .risk_tier(parse_address(address)?)
            .map_err(value_err)?;
        Ok(format!("{tier:?}").to_lowercase())
    }

    fn __repr__(&self) -> String {
        format!(
            "Network(subnets={}, hosts={}, services={})",
            self.inner.subnets.len(),
            self.inner.hosts.len(),
            self.inner.total_services()
        )
    }
}

/// One episodic simulation bound to a network, target and goal set.
#[pyclass]
struct Simulator {
    env: Env,
    state: EnvState,
}

#[pymethods]
impl Simulator {
    /// Build a simulator. `goal_set_json` defaults to the bare target goal
    /// worth `goal_reward`.
    #[new]
    #[pyo3(signature = (network, target, initial, penalty_scale=1.0, step_limit=3000, goal_reward=100.0, goal_set_json=None))]
    fn new(
        network: &Network,
        target: &str,
        initial: &str,
        penalty_scale: f64,
        step_limit: usize,
        goal_reward: f64,
        goal_set_json: Option<&str>,
    ) -> PyResult<Simulator> {
        let target = parse_address(target)?;
        let goals = match goal_set_json {
            Some(text) => serde_json::from_str::<GoalSet>(text).map_err(value_err)?,
            None => GoalSet::single_target(target, goal_reward),
        };
        let cfg = MdpConfig {
            initial_host: parse_address(initial)?,
            target_host: target,
            gamma: 0.99,
            step_limit,
            goal_reward,
            discovery_reward: 1.0,
            penalty_scale: PenaltyScale::new(penalty_scale).map_err(value_err)?,
        };
        let env = Env::new(network.inner.clone(), cfg, goals).map_err(value_err)?;
        let state = env.reset();
        Ok(Simulator { env, state })
    }

    /// Start a fresh episode and return the encoded observation.
    fn reset(&mut self) -> Vec<f64> {
        self.state = self.env.reset();
        self.env.encode(&self.state).0
    }

    /// Apply one action; returns `(reward, done, invalid)`.
    fn step(&mut self, target: &str, kind: &str) -> PyResult<(f64, bool, bool)> {
        let action = Action { target: parse_address(target)?, kind: parse_kind(kind)? };
        let (next, reward, done, info) = self.env.step(&self.state, action).map_err(value_err)?;
        self.state = next;
        Ok((reward.total(), done, info.invalid_target))
    }

    fn observation(&self) -> Vec<f64> {
        self.env.encode(&self.state).0
    }

    fn action_mask(&self, mode: &str) -> PyResult<Vec<bool>> {
        Ok(self.env.action_mask(&self.state, parse_mask_mode(mode)?))
    }

    /// The canonical action list as `(address, kind)` pairs.
    fn actions(&self) -> Vec<(String, String)> {
        self.env
            .action_space()
            .iter()
            .map(|a| (a.target.to_string(), a.kind.as_str().to_string()))
            .collect()
    }

    #[getter]
    fn observation_len(&self) -> usize {
        self.env.observation_len()
    }

    #[getter]
    fn slice_len(&self) -> usize {
        self.env.slice_len()
    }

    #[getter]
    fn done(&self) -> bool {
        self.state.done()
    }

    #[getter]
    fn goals_paid(&self) -> usize {
        self.state.goals_paid()
    }

    fn goal_set_json(&self) -> PyResult<String> {
        serde_json::to_string(self.env.goals()).map_err(value_err)
    }
}

/// Generalized advantage estimation; `values` needs one trailing bootstrap
/// entry.
#[pyfunction]
fn gae(rewards: Vec<f64>, values: Vec<f64>, gamma: f64, lambda: f64) -> PyResult<Vec<f64>> {
    algos::gae(&rewards, &values, gamma, lambda).map_err(value_err)
}

/// Clipped-surrogate loss; returns `(loss, grad_log_prob, clip_fraction)`.
#[pyfunction]
fn ppo_loss(
    log_prob_new: Vec<f64>,
    log_prob_old: Vec<f64>,
    advantages: Vec<f64>,
    clip: f64,
) -> PyResult<(f64, Vec<f64>, f64)> {
    let out = algos::ppo_policy_loss(&log_prob_new, &log_prob_old, &advantages, clip)
        .map_err(value_err)?;
    Ok((out.loss, out.grad_log_prob, out.clip_fraction))
}

/// Detection penalty for one action kind against one service category, at
/// the given scale.
#[pyfunction]
fn penalty(category: &str, kind: &str, scale: f64) -> PyResult<f64> {
    let category = terrain::ServiceCategory::parse(category)
        .ok_or_else(|| PyValueError::new_err(format!("unknown service category {category:?}")))?;
    let kind = parse_kind(kind)?;
    let scale = PenaltyScale::new(scale).map_err(value_err)?;
    terrain::scaled_penalty(terrain::base_penalty(category, kind), scale).map_err(value_err)
}

/// Full training run from a JSON run config; returns
/// `(checkpoint_json, goal_set_json, metrics_csv)` exactly as the CLI would
/// write them.
#[pyfunction]
fn train(config_json: &str) -> PyResult<(String, String, String)> {
    let cfg: harness::RunConfig = serde_json::from_str(config_json).map_err(value_err)?;
    let outcome = harness::train(&cfg).map_err(value_err)?;
    let checkpoint = serde_json::to_string_pretty(&outcome.agent).map_err(value_err)?;
    let goals = serde_json::to_string_pretty(&outcome.goal_set).map_err(value_err)?;
    Ok((
        checkpoint + "\n",
        goals + "\n",
        harness::metrics_to_csv(&outcome.metrics),
    ))
}

/// Greedy evaluation of a trained checkpoint; returns the evaluation
/// document as JSON.
#[pyfunction]
fn evaluate(config_json: &str, checkpoint_json: &str, goal_set_json: &str) -> PyResult<String> {
    let cfg: harness::RunConfig = serde_json::from_str(config_json).map_err(value_err)?;
    let agent: algos::AnyAgent = serde_json::from_str(checkpoint_json).map_err(value_err)?;
    let goals: GoalSet = serde_json::from_str(goal_set_json).map_err(value_err)?;
    let net = Arc::new(cfg.network.load().map_err(value_err)?);
    let env = cfg.build_env(net, goals).map_err(value_err)?;
    let path = harness::evaluate(&env, &agent).map_err(value_err)?;
    serde_json::to_string_pretty(&path).map_err(value_err)
}

/// Run only the warmup phase of a config; returns the grown goal set JSON.
#[pyfunction]
fn warmup_goals(config_json: &str) -> PyResult<String> {
    use rand::SeedableRng;
    let cfg: harness::RunConfig = serde_json::from_str(config_json).map_err(value_err)?;
    let net = Arc::new(cfg.network.load().map_err(value_err)?);
    let mdp = cfg.mdp_config().map_err(value_err)?;
    let goals = GoalSet::single_target(mdp.target_host, mdp.goal_reward);
    let env = Env::new(net, mdp, goals).map_err(value_err)?;
    let mut rng_init = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    rng_init.set_stream(0);
    let agent = algos::AnyAgent::new(cfg.algorithm, &env, cfg.algo.clone(), cfg.mask_mode, &mut rng_init)
        .map_err(value_err)?;
    let mut rng_warm = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    rng_warm.set_stream(1);
    let grown =
        sdrlab::warmup::run_warmup(&env, &cfg.warmup, &agent, &mut rng_warm).map_err(value_err)?;
    serde_json::to_string(&grown).map_err(value_err)
}

/// Parse an algorithm name, raising on unknown values.
#[pyfunction]
fn check_algorithm(name: &str) -> PyResult<String> {
    Ok(algos::Algorithm::from_str(name).map_err(value_err)?.to_string())
}

#[pymodule]
fn sdrlab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Network>()?;
    m.add_class::<Simulator>()?;
    m.add_function(wrap_pyfunction!(gae, m)?)?;
    m.add_function(wrap_pyfunction!(ppo_loss, m)?)?;
    m.add_function(wrap_pyfunction!(penalty, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(warmup_goals, m)?)?;
    m.add_function(wrap_pyfunction!(check_algorithm, m)?)?;
    Ok(())
}
