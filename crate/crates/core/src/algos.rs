//! Policy-gradient training: GAE, A2C and clipped-surrogate PPO, in single-
//! and double-agent form.
//!
//! The double agent splits each decision in two: a structuring policy picks
//! the target host from the full observation, then an exploiting policy
//! picks the action kind from just that host's feature slice. The joint
//! log-probability is the sum of the two choices; each sub-agent keeps its
//! own value function and advantage estimates.
//!
//! Action masks are applied by renormalizing the softmax output over the
//! valid entries. Masks are stored in the trajectory so that update-time
//! distributions match what was sampled from, even under PPO's repeated
//! epochs.

use std::collections::BTreeMap;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, Env, EnvError, EnvState, MaskMode};
use crate::nn::{Adam, Mlp, MlpSpec, NnError, OutputHead};

/// Floor for probabilities entering a division or logarithm.
const PROB_FLOOR: f64 = 1e-300;

#[derive(Debug, thiserror::Error)]
pub enum AlgoError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("no valid action available")]
    EmptyMask,
    #[error("{0}")]
    Shape(String),
    #[error("unknown algorithm `{0}`; expected a2c, da-a2c or da-ppo")]
    UnknownAlgorithm(String),
}

/// Training algorithm selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "a2c")]
    A2c,
    #[serde(rename = "da-a2c")]
    DaA2c,
    #[serde(rename = "da-ppo")]
    DaPpo,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::A2c => "a2c",
            Algorithm::DaA2c => "da-a2c",
            Algorithm::DaPpo => "da-ppo",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = AlgoError;
    fn from_str(s: &str) -> Result<Self, AlgoError> {
        match s {
            "a2c" => Ok(Algorithm::A2c),
            "da-a2c" => Ok(Algorithm::DaA2c),
            "da-ppo" => Ok(Algorithm::DaPpo),
            other => Err(AlgoError::UnknownAlgorithm(other.to_string())),
        }
    }
}

/// Hyper-parameters shared by every algorithm. Unused knobs (e.g. `clip`
/// under A2C) are simply ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgoParams {
    #[serde(default = "d_gamma")]
    pub gamma: f64,
    #[serde(default = "d_lambda")]
    pub lambda: f64,
    #[serde(default = "d_clip")]
    pub clip: f64,
    #[serde(default = "d_value_weight")]
    pub value_weight: f64,
    #[serde(default = "d_entropy_weight")]
    pub entropy_weight: f64,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_minibatch")]
    pub minibatch: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_episodes")]
    pub episodes: usize,
    #[serde(default = "d_normalize")]
    pub normalize_advantages: bool,
}

fn d_gamma() -> f64 {
    0.99
}
fn d_lambda() -> f64 {
    0.95
}
fn d_clip() -> f64 {
    0.2
}
fn d_value_weight() -> f64 {
    0.5
}
fn d_entropy_weight() -> f64 {
    0.01
}
fn d_epochs() -> usize {
    4
}
fn d_minibatch() -> usize {
    64
}
fn d_lr() -> f64 {
    3e-4
}
fn d_episodes() -> usize {
    4000
}
fn d_normalize() -> bool {
    true
}

impl Default for AlgoParams {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults are total")
    }
}

/// One sampled decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Choice {
    pub action: Action,
    pub log_prob: f64,
}

/// Anything that can pick an action for a state. Sampling never mutates the
/// policy, which is what lets the warmup phase hold it frozen.
pub trait Policy {
    fn sample(&self, env: &Env, state: &EnvState, rng: &mut ChaCha8Rng)
        -> Result<Choice, AlgoError>;
}

/// Uniform choice over the valid actions.
pub struct RandomPolicy {
    pub mask_mode: MaskMode,
}

impl Policy for RandomPolicy {
    fn sample(
        &self,
        env: &Env,
        state: &EnvState,
        rng: &mut ChaCha8Rng,
    ) -> Result<Choice, AlgoError> {
        let mask = env.action_mask(state, self.mask_mode);
        let valid: Vec<usize> = mask
            .iter()
            .enumerate()
            .filter_map(|(i, &ok)| ok.then_some(i))
            .collect();
        if valid.is_empty() {
            return Err(AlgoError::EmptyMask);
        }
        let pick = valid[rng.gen_range(0..valid.len())];
        Ok(Choice {
            action: env.action_space()[pick],
            log_prob: -(valid.len() as f64).ln(),
        })
    }
}

/// Generalized advantage estimation over one complete episode.
///
/// `values` must hold one entry per step plus the terminal bootstrap, so
/// `values.len() == rewards.len() + 1`. With `lambda = 1` the result is the
/// discounted return minus the baseline; with `lambda = 0` it degenerates to
/// the one-step TD residual.
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<Vec<f64>, AlgoError> {
    if values.len() != rewards.len() + 1 {
        return Err(AlgoError::Shape(format!(
            "need {} values for {} rewards",
            rewards.len() + 1,
            rewards.len()
        )));
    }
    let mut advantages = vec![0.0; rewards.len()];
    let mut carry = 0.0;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + gamma * values[t + 1] - values[t];
        carry = delta + gamma * lambda * carry;
        advantages[t] = carry;
    }
    Ok(advantages)
}

/// In-place shift to zero mean, unit (population) standard deviation.
pub fn normalize_advantages(advantages: &mut [f64]) {
    if advantages.is_empty() {
        return;
    }
    let n = advantages.len() as f64;
    let mean = advantages.iter().sum::<f64>() / n;
    let var = advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    for a in advantages.iter_mut() {
        *a = (*a - mean) / std;
    }
}

/// Clipped-surrogate policy loss and its gradient with respect to each new
/// log-probability. Samples where the clip binds contribute zero gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoPolicyLoss {
    pub loss: f64,
    pub grad_log_prob: Vec<f64>,
    /// Fraction of samples whose objective came from the clipped branch.
    pub clip_fraction: f64,
}

pub fn ppo_policy_loss(
    log_prob_new: &[f64],
    log_prob_old: &[f64],
    advantages: &[f64],
    clip: f64,
) -> Result<PpoPolicyLoss, AlgoError> {
    let n = log_prob_new.len();
    if log_prob_old.len() != n || advantages.len() != n || n == 0 {
        return Err(AlgoError::Shape("ppo loss needs equal, non-empty inputs".into()));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; n];
    let mut clipped = 0usize;
    for i in 0..n {
        let ratio = (log_prob_new[i] - log_prob_old[i]).exp();
        let unclipped = ratio * advantages[i];
        let bounded = ratio.clamp(1.0 - clip, 1.0 + clip) * advantages[i];
        if unclipped <= bounded {
            loss -= unclipped;
            grad[i] = -advantages[i] * ratio / n as f64;
        } else {
            loss -= bounded;
            clipped += 1;
        }
    }
    Ok(PpoPolicyLoss {
        loss: loss / n as f64,
        grad_log_prob: grad,
        clip_fraction: clipped as f64 / n as f64,
    })
}

/// A2C objective for reporting and tests: policy term plus weighted value
/// error minus weighted entropy.
pub fn a2c_loss(
    log_probs: &[f64],
    advantages: &[f64],
    values: &[f64],
    returns: &[f64],
    entropies: &[f64],
    value_weight: f64,
    entropy_weight: f64,
) -> f64 {
    let n = log_probs.len() as f64;
    let policy: f64 = log_probs
        .iter()
        .zip(advantages)
        .map(|(lp, a)| -a * lp)
        .sum::<f64>()
        / n;
    let value: f64 = values
        .iter()
        .zip(returns)
        .map(|(v, r)| (v - r) * (v - r))
        .sum::<f64>()
        / n;
    let entropy: f64 = entropies.iter().sum::<f64>() / n;
    policy + value_weight * value - entropy_weight * entropy
}

/// Renormalized masked distribution `q = p .* m / sum(p .* m)`.
fn masked_probs(p: &[f64], mask: &[bool]) -> Result<(Vec<f64>, f64), AlgoError> {
    let mut total = 0.0;
    for (v, &m) in p.iter().zip(mask) {
        if m {
            total += v;
        }
    }
    if total <= 0.0 {
        return Err(AlgoError::EmptyMask);
    }
    let q = p
        .iter()
        .zip(mask)
        .map(|(v, &m)| if m { v / total } else { 0.0 })
        .collect();
    Ok((q, total))
}

/// Chain rule through the masked renormalization:
/// `dL/dp_j = (m_j / S) * (dL/dq_j - sum_i q_i dL/dq_i)`.
fn masked_renorm_backward(
    mask: &[bool],
    q: &[f64],
    total: f64,
    grad_q: &[f64],
) -> Vec<f64> {
    let inner: f64 = q.iter().zip(grad_q).map(|(qi, gi)| qi * gi).sum();
    mask.iter()
        .zip(grad_q)
        .map(|(&m, &g)| if m { (g - inner) / total } else { 0.0 })
        .collect()
}

fn sample_index(q: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, &p) in q.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
            cum += p;
            if u < cum {
                return i;
            }
        }
    }
    last_positive
}

fn greedy_index(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in q.iter().enumerate() {
        if p > q[best] {
            best = i;
        }
    }
    best
}

/// What one training episode produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeSummary {
    pub reward: f64,
    pub steps: usize,
    pub completed: bool,
}

/// Policy/value pair with its optimizers.
#[derive(Debug, Clone)]
struct AcPair {
    policy: Mlp,
    value: Mlp,
    opt_policy: Adam,
    opt_value: Adam,
}

impl AcPair {
    fn new(policy_spec: MlpSpec, value_spec: MlpSpec, lr: f64, rng: &mut ChaCha8Rng) -> AcPair {
        let policy = Mlp::init(policy_spec, rng);
        let value = Mlp::init(value_spec, rng);
        let opt_policy = Adam::new(lr, &policy);
        let opt_value = Adam::new(lr, &value);
        AcPair { policy, value, opt_policy, opt_value }
    }

    fn from_nets(policy: Mlp, value: Mlp, lr: f64) -> AcPair {
        let opt_policy = Adam::new(lr, &policy);
        let opt_value = Adam::new(lr, &value);
        AcPair { policy, value, opt_policy, opt_value }
    }

    fn values(&self, x: &Array2<f64>) -> Result<Vec<f64>, AlgoError> {
        Ok(self.value.forward(x)?.column(0).to_vec())
    }

    /// One Adam step on the policy from dL/d(probs).
    fn step_policy(&mut self, x: &Array2<f64>, grad_probs: &Array2<f64>) -> Result<(), AlgoError> {
        let cache = self.policy.forward_cached(x)?;
        let (grads, _) = self.policy.backward(&cache, grad_probs);
        self.opt_policy.step(&mut self.policy, &grads);
        Ok(())
    }

    /// One Adam step on the value net toward `targets`, scaled by
    /// `value_weight`; returns the weighted MSE.
    fn step_value(
        &mut self,
        x: &Array2<f64>,
        targets: &[f64],
        value_weight: f64,
    ) -> Result<f64, AlgoError> {
        let cache = self.value.forward_cached(x)?;
        let out = cache.output().clone();
        let n = targets.len() as f64;
        let mut grad = Array2::zeros(out.dim());
        let mut mse = 0.0;
        for (i, &target) in targets.iter().enumerate() {
            let err = out[[i, 0]] - target;
            mse += err * err;
            grad[[i, 0]] = value_weight * 2.0 * err / n;
        }
        let (grads, _) = self.value.backward(&cache, &grad);
        self.opt_value.step(&mut self.value, &grads);
        Ok(value_weight * mse / n)
    }
}

/// Flat-action agent: one policy over every `(host, kind)` pair.
#[derive(Debug, Clone)]
pub struct SingleAgent {
    params: AlgoParams,
    mask_mode: MaskMode,
    pair: AcPair,
}

struct SingleStep {
    obs: Vec<f64>,
    action: usize,
    mask: Vec<bool>,
    reward: f64,
}

/// Two-level agent: structuring policy picks the host from the full
/// observation, exploiting policy picks the kind from the host's slice.
#[derive(Debug, Clone)]
pub struct DoubleAgent {
    params: AlgoParams,
    mask_mode: MaskMode,
    ppo: bool,
    structuring: AcPair,
    exploiting: AcPair,
}

struct DoubleStep {
    obs: Vec<f64>,
    slice: Vec<f64>,
    host: usize,
    kind: usize,
    host_mask: Vec<bool>,
    kind_mask: Vec<bool>,
    log_prob_host: f64,
    log_prob_kind: f64,
    reward: f64,
}

/// Any trainable agent, tagged by algorithm.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "AgentDoc", into = "AgentDoc")]
pub enum AnyAgent {
    Single(SingleAgent),
    Double(DoubleAgent),
}

/// Checkpoint layout: algorithm tag, hyper-parameters and named nets.
/// Optimizer moments are deliberately not persisted; loading a checkpoint
/// restarts Adam.
#[derive(Serialize, Deserialize)]
struct AgentDoc {
    algorithm: Algorithm,
    params: AlgoParams,
    mask_mode: MaskMode,
    nets: BTreeMap<String, Mlp>,
}

impl From<AnyAgent> for AgentDoc {
    fn from(agent: AnyAgent) -> AgentDoc {
        match agent {
            AnyAgent::Single(a) => AgentDoc {
                algorithm: Algorithm::A2c,
                params: a.params,
                mask_mode: a.mask_mode,
                nets: BTreeMap::from([
                    ("policy".to_string(), a.pair.policy),
                    ("value".to_string(), a.pair.value),
                ]),
            },
            AnyAgent::Double(a) => AgentDoc {
                algorithm: if a.ppo { Algorithm::DaPpo } else { Algorithm::DaA2c },
                params: a.params,
                mask_mode: a.mask_mode,
                nets: BTreeMap::from([
                    ("structuring_policy".to_string(), a.structuring.policy),
                    ("structuring_value".to_string(), a.structuring.value),
                    ("exploiting_policy".to_string(), a.exploiting.policy),
                    ("exploiting_value".to_string(), a.exploiting.value),
                ]),
            },
        }
    }
}

impl TryFrom<AgentDoc> for AnyAgent {
    type Error = AlgoError;

    fn try_from(mut doc: AgentDoc) -> Result<AnyAgent, AlgoError> {
        let mut take = |name: &str| {
            doc.nets
                .remove(name)
                .ok_or_else(|| AlgoError::Shape(format!("checkpoint is missing net `{name}`")))
        };
        match doc.algorithm {
            Algorithm::A2c => {
                let pair = AcPair::from_nets(take("policy")?, take("value")?, doc.params.lr);
                Ok(AnyAgent::Single(SingleAgent {
                    params: doc.params,
                    mask_mode: doc.mask_mode,
                    pair,
                }))
            }
            Algorithm::DaA2c | Algorithm::DaPpo => {
                let structuring = AcPair::from_nets(
                    take("structuring_policy")?,
                    take("structuring_value")?,
                    doc.params.lr,
                );
                let exploiting = AcPair::from_nets(
                    take("exploiting_policy")?,
                    take("exploiting_value")?,
                    doc.params.lr,
                );
                Ok(AnyAgent::Double(DoubleAgent {
                    ppo: doc.algorithm == Algorithm::DaPpo,
                    params: doc.params,
                    mask_mode: doc.mask_mode,
                    structuring,
                    exploiting,
                }))
            }
        }
    }
}

impl AnyAgent {
    /// Fresh agent for `env`. Net shapes follow the algorithm: the flat
    /// agent uses `[obs, 64, 32, |A|]`, the double agent adds an exploiting
    /// pair on `[slice, 10, kinds]`. Initialization order is fixed so a
    /// seeded RNG reproduces the same parameters.
    pub fn new(
        algorithm: Algorithm,
        env: &Env,
        params: AlgoParams,
        mask_mode: MaskMode,
        rng: &mut ChaCha8Rng,
    ) -> Result<AnyAgent, AlgoError> {
        let obs = env.observation_len();
        let kinds = crate::env::ActionKind::ALL.len();
        match algorithm {
            Algorithm::A2c => {
                let policy =
                    MlpSpec::structuring(obs, env.action_space().len(), OutputHead::Softmax)?;
                let value = MlpSpec::structuring(obs, 1, OutputHead::Linear)?;
                Ok(AnyAgent::Single(SingleAgent {
                    pair: AcPair::new(policy, value, params.lr, rng),
                    params,
                    mask_mode,
                }))
            }
            Algorithm::DaA2c | Algorithm::DaPpo => {
                let s_policy = MlpSpec::structuring(obs, env.num_hosts(), OutputHead::Softmax)?;
                let s_value = MlpSpec::structuring(obs, 1, OutputHead::Linear)?;
                let e_policy = MlpSpec::exploiting(env.slice_len(), kinds, OutputHead::Softmax)?;
                let e_value = MlpSpec::exploiting(env.slice_len(), 1, OutputHead::Linear)?;
                Ok(AnyAgent::Double(DoubleAgent {
                    ppo: algorithm == Algorithm::DaPpo,
                    structuring: AcPair::new(s_policy, s_value, params.lr, rng),
                    exploiting: AcPair::new(e_policy, e_value, params.lr, rng),
                    params,
                    mask_mode,
                }))
            }
        }
    }

    pub fn algorithm(&self) -> Algorithm {
        match self {
            AnyAgent::Single(_) => Algorithm::A2c,
            AnyAgent::Double(a) if a.ppo => Algorithm::DaPpo,
            AnyAgent::Double(_) => Algorithm::DaA2c,
        }
    }

    pub fn params(&self) -> &AlgoParams {
        match self {
            AnyAgent::Single(a) => &a.params,
            AnyAgent::Double(a) => &a.params,
        }
    }

    pub fn mask_mode(&self) -> MaskMode {
        match self {
            AnyAgent::Single(a) => a.mask_mode,
            AnyAgent::Double(a) => a.mask_mode,
        }
    }

    /// Order-stable digest over all parameters.
    pub fn param_fingerprint(&self) -> u64 {
        match self {
            AnyAgent::Single(a) => a
                .pair
                .policy
                .param_fingerprint()
                .rotate_left(1)
                .wrapping_add(a.pair.value.param_fingerprint()),
            AnyAgent::Double(a) => {
                let mut acc = 0u64;
                for net in [
                    &a.structuring.policy,
                    &a.structuring.value,
                    &a.exploiting.policy,
                    &a.exploiting.value,
                ] {
                    acc = acc.rotate_left(7).wrapping_add(net.param_fingerprint());
                }
                acc
            }
        }
    }

    /// Collects one episode and applies the algorithm's update.
    pub fn train_episode(
        &mut self,
        env: &Env,
        rng: &mut ChaCha8Rng,
    ) -> Result<EpisodeSummary, AlgoError> {
        match self {
            AnyAgent::Single(agent) => agent.train_episode(env, rng),
            AnyAgent::Double(agent) => agent.train_episode(env, rng),
        }
    }

    /// Deterministic argmax action, ties to the lowest index.
    pub fn greedy_action(&self, env: &Env, state: &EnvState) -> Result<Action, AlgoError> {
        match self {
            AnyAgent::Single(agent) => {
                let (q, _, _) = agent.distribution(env, state)?;
                Ok(env.action_space()[greedy_index(&q)])
            }
            AnyAgent::Double(agent) => {
                let obs = env.encode(state);
                let mask = env.action_mask(state, agent.mask_mode);
                let (q_host, _, _) = agent.host_distribution(env, &obs, &mask)?;
                let host = greedy_index(&q_host);
                let (q_kind, _, _) = agent.kind_distribution(env, &obs, &mask, host)?;
                let kind = crate::env::ActionKind::ALL[greedy_index(&q_kind)];
                Ok(Action { target: env.host_address(host), kind })
            }
        }
    }
}

impl Policy for AnyAgent {
    fn sample(
        &self,
        env: &Env,
        state: &EnvState,
        rng: &mut ChaCha8Rng,
    ) -> Result<Choice, AlgoError> {
        match self {
            AnyAgent::Single(agent) => {
                let (q, _, _) = agent.distribution(env, state)?;
                let idx = sample_index(&q, rng);
                Ok(Choice {
                    action: env.action_space()[idx],
                    log_prob: q[idx].max(PROB_FLOOR).ln(),
                })
            }
            AnyAgent::Double(agent) => {
                let obs = env.encode(state);
                let mask = env.action_mask(state, agent.mask_mode);
                let (q_host, _, _) = agent.host_distribution(env, &obs, &mask)?;
                let host = sample_index(&q_host, rng);
                let (q_kind, _, _) = agent.kind_distribution(env, &obs, &mask, host)?;
                let kind_idx = sample_index(&q_kind, rng);
                Ok(Choice {
                    action: Action {
                        target: env.host_address(host),
                        kind: crate::env::ActionKind::ALL[kind_idx],
                    },
                    log_prob: q_host[host].max(PROB_FLOOR).ln()
                        + q_kind[kind_idx].max(PROB_FLOOR).ln(),
                })
            }
        }
    }
}

/// Per-host validity: a host is a legal structuring choice when any of its
/// kinds is valid.
fn host_mask_from(mask: &[bool], kinds: usize) -> Vec<bool> {
    mask.chunks(kinds).map(|c| c.iter().any(|&b| b)).collect()
}

fn to_matrix(rows: &[Vec<f64>]) -> Result<Array2<f64>, AlgoError> {
    let cols = rows.first().map(|r| r.len()).unwrap_or(0);
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), cols), flat)
        .map_err(|e| AlgoError::Shape(e.to_string()))
}

/// dL/dq for the A2C policy objective on one row: `-adv * ln q[chosen] / n`
/// plus the entropy bonus gradient over the masked entries.
fn a2c_grad_q_row(
    grad_row: &mut [f64],
    q: &[f64],
    mask: &[bool],
    chosen: usize,
    advantage: f64,
    entropy_weight: f64,
    n: f64,
) {
    grad_row[chosen] -= advantage / (q[chosen].max(PROB_FLOOR) * n);
    if entropy_weight != 0.0 {
        for i in 0..q.len() {
            if mask[i] {
                // d(-w H)/dq_i = w (ln q_i + 1)
                grad_row[i] += entropy_weight * (q[i].max(PROB_FLOOR).ln() + 1.0) / n;
            }
        }
    }
}

impl SingleAgent {
    /// Masked action distribution for `state`.
    fn distribution(&self, env: &Env, state: &EnvState) -> Result<(Vec<f64>, Vec<bool>, f64), AlgoError> {
        let obs = env.encode(state);
        let x = to_matrix(&[obs.0])?;
        let p = self.pair.policy.forward(&x)?;
        let mask = env.action_mask(state, self.mask_mode);
        let (q, total) = masked_probs(p.row(0).as_slice().unwrap(), &mask)?;
        Ok((q, mask, total))
    }

    fn train_episode(
        &mut self,
        env: &Env,
        rng: &mut ChaCha8Rng,
    ) -> Result<EpisodeSummary, AlgoError> {
        let mut state = env.reset();
        let mut steps: Vec<SingleStep> = Vec::new();
        let mut total_reward = 0.0;
        while !state.done() {
            let obs = env.encode(&state);
            let x = to_matrix(std::slice::from_ref(&obs.0))?;
            let p = self.pair.policy.forward(&x)?;
            let mask = env.action_mask(&state, self.mask_mode);
            let (q, _) = masked_probs(p.row(0).as_slice().unwrap(), &mask)?;
            let idx = sample_index(&q, rng);
            let (next, reward, _, _) = env.step(&state, env.action_space()[idx])?;
            total_reward += reward.total();
            steps.push(SingleStep {
                obs: obs.0,
                action: idx,
                mask,
                reward: reward.total(),
            });
            state = next;
        }
        let completed = state.goals_paid() == env.goals().len();
        let count = steps.len();
        self.update(&steps)?;
        Ok(EpisodeSummary { reward: total_reward, steps: count, completed })
    }

    fn update(&mut self, steps: &[SingleStep]) -> Result<(), AlgoError> {
        if steps.is_empty() {
            return Ok(());
        }
        let n = steps.len();
        let obs: Vec<Vec<f64>> = steps.iter().map(|s| s.obs.clone()).collect();
        let x = to_matrix(&obs)?;
        let rewards: Vec<f64> = steps.iter().map(|s| s.reward).collect();

        let mut values = self.pair.values(&x)?;
        values.push(0.0);
        let mut advantages = gae(&rewards, &values, self.params.gamma, self.params.lambda)?;
        let returns: Vec<f64> = advantages
            .iter()
            .zip(&values)
            .map(|(a, v)| a + v)
            .collect();
        if self.params.normalize_advantages {
            normalize_advantages(&mut advantages);
        }

        let cache = self.pair.policy.forward_cached(&x)?;
        let probs = cache.output().clone();
        let mut grad = Array2::zeros(probs.dim());
        for (i, step) in steps.iter().enumerate() {
            let (q, total) = masked_probs(probs.row(i).as_slice().unwrap(), &step.mask)?;
            let mut grad_q = vec![0.0; q.len()];
            a2c_grad_q_row(
                &mut grad_q,
                &q,
                &step.mask,
                step.action,
                advantages[i],
                self.params.entropy_weight,
                n as f64,
            );
            let grad_p = masked_renorm_backward(&step.mask, &q, total, &grad_q);
            for (j, g) in grad_p.into_iter().enumerate() {
                grad[[i, j]] = g;
            }
        }
        self.pair.step_policy(&x, &grad)?;
        self.pair.step_value(&x, &returns[..n], self.params.value_weight)?;
        Ok(())
    }
}

impl DoubleAgent {
    fn host_distribution(
        &self,
        _env: &Env,
        obs: &crate::env::Observation,
        mask: &[bool],
    ) -> Result<(Vec<f64>, Vec<bool>, f64), AlgoError> {
        let kinds = crate::env::ActionKind::ALL.len();
        let host_mask = host_mask_from(mask, kinds);
        let x = to_matrix(std::slice::from_ref(&obs.0))?;
        let p = self.structuring.policy.forward(&x)?;
        let (q, total) = masked_probs(p.row(0).as_slice().unwrap(), &host_mask)?;
        Ok((q, host_mask, total))
    }

    fn kind_distribution(
        &self,
        env: &Env,
        obs: &crate::env::Observation,
        mask: &[bool],
        host: usize,
    ) -> Result<(Vec<f64>, Vec<bool>, f64), AlgoError> {
        let kinds = crate::env::ActionKind::ALL.len();
        let kind_mask: Vec<bool> = mask[host * kinds..(host + 1) * kinds].to_vec();
        let slice = env.encode_host_slice(obs, host);
        let x = to_matrix(&[slice])?;
        let p = self.exploiting.policy.forward(&x)?;
        let (q, total) = masked_probs(p.row(0).as_slice().unwrap(), &kind_mask)?;
        Ok((q, kind_mask, total))
    }

    fn train_episode(
        &mut self,
        env: &Env,
        rng: &mut ChaCha8Rng,
    ) -> Result<EpisodeSummary, AlgoError> {
        let kinds = crate::env::ActionKind::ALL.len();
        let mut state = env.reset();
        let mut steps: Vec<DoubleStep> = Vec::new();
        let mut total_reward = 0.0;
        while !state.done() {
            let obs = env.encode(&state);
            let mask = env.action_mask(&state, self.mask_mode);
            let (q_host, host_mask, _) = self.host_distribution(env, &obs, &mask)?;
            let host = sample_index(&q_host, rng);
            let (q_kind, kind_mask, _) = self.kind_distribution(env, &obs, &mask, host)?;
            let kind_idx = sample_index(&q_kind, rng);
            let action = Action {
                target: env.host_address(host),
                kind: crate::env::ActionKind::ALL[kind_idx],
            };
            let slice = env.encode_host_slice(&obs, host);
            let (next, reward, _, _) = env.step(&state, action)?;
            total_reward += reward.total();
            steps.push(DoubleStep {
                obs: obs.0,
                slice,
                host,
                kind: kind_idx,
                host_mask,
                kind_mask,
                log_prob_host: q_host[host].max(PROB_FLOOR).ln(),
                log_prob_kind: q_kind[kind_idx].max(PROB_FLOOR).ln(),
                reward: reward.total(),
            });
            state = next;
        }
        debug_assert!(steps.iter().all(|s| s.kind < kinds));
        let completed = state.goals_paid() == env.goals().len();
        let count = steps.len();
        if self.ppo {
            self.update_ppo(steps, rng)?;
        } else {
            self.update_a2c(steps)?;
        }
        Ok(EpisodeSummary { reward: total_reward, steps: count, completed })
    }

    /// Advantages and value targets for both sub-agents, from the current
    /// value nets.
    fn advantages(
        &self,
        x_obs: &Array2<f64>,
        x_slice: &Array2<f64>,
        rewards: &[f64],
    ) -> Result<([Vec<f64>; 2], [Vec<f64>; 2]), AlgoError> {
        let mut adv = Vec::with_capacity(2);
        let mut ret = Vec::with_capacity(2);
        for (pair, x) in [(&self.structuring, x_obs), (&self.exploiting, x_slice)] {
            let mut values = pair.values(x)?;
            values.push(0.0);
            let mut a = gae(rewards, &values, self.params.gamma, self.params.lambda)?;
            let r: Vec<f64> = a.iter().zip(&values).map(|(ai, vi)| ai + vi).collect();
            if self.params.normalize_advantages {
                normalize_advantages(&mut a);
            }
            adv.push(a);
            ret.push(r);
        }
        let [a_s, a_e] = <[Vec<f64>; 2]>::try_from(adv).unwrap();
        let [r_s, r_e] = <[Vec<f64>; 2]>::try_from(ret).unwrap();
        Ok(([a_s, a_e], [r_s, r_e]))
    }

    fn update_a2c(&mut self, steps: Vec<DoubleStep>) -> Result<(), AlgoError> {
        if steps.is_empty() {
            return Ok(());
        }
        let n = steps.len();
        let obs: Vec<Vec<f64>> = steps.iter().map(|s| s.obs.clone()).collect();
        let slices: Vec<Vec<f64>> = steps.iter().map(|s| s.slice.clone()).collect();
        let rewards: Vec<f64> = steps.iter().map(|s| s.reward).collect();
        let x_obs = to_matrix(&obs)?;
        let x_slice = to_matrix(&slices)?;
        let ([adv_s, adv_e], [ret_s, ret_e]) = self.advantages(&x_obs, &x_slice, &rewards)?;

        // Structuring head.
        let cache = self.structuring.policy.forward_cached(&x_obs)?;
        let probs = cache.output().clone();
        let mut grad = Array2::zeros(probs.dim());
        for (i, step) in steps.iter().enumerate() {
            let (q, total) = masked_probs(probs.row(i).as_slice().unwrap(), &step.host_mask)?;
            let mut grad_q = vec![0.0; q.len()];
            a2c_grad_q_row(
                &mut grad_q,
                &q,
                &step.host_mask,
                step.host,
                adv_s[i],
                self.params.entropy_weight,
                n as f64,
            );
            let grad_p = masked_renorm_backward(&step.host_mask, &q, total, &grad_q);
            for (j, g) in grad_p.into_iter().enumerate() {
                grad[[i, j]] = g;
            }
        }
        self.structuring.step_policy(&x_obs, &grad)?;
        self.structuring.step_value(&x_obs, &ret_s, self.params.value_weight)?;

        // Exploiting head.
        let cache = self.exploiting.policy.forward_cached(&x_slice)?;
        let probs = cache.output().clone();
        let mut grad = Array2::zeros(probs.dim());
        for (i, step) in steps.iter().enumerate() {
            let (q, total) = masked_probs(probs.row(i).as_slice().unwrap(), &step.kind_mask)?;
            let mut grad_q = vec![0.0; q.len()];
            a2c_grad_q_row(
                &mut grad_q,
                &q,
                &step.kind_mask,
                step.kind,
                adv_e[i],
                self.params.entropy_weight,
                n as f64,
            );
            let grad_p = masked_renorm_backward(&step.kind_mask, &q, total, &grad_q);
            for (j, g) in grad_p.into_iter().enumerate() {
                grad[[i, j]] = g;
            }
        }
        self.exploiting.step_policy(&x_slice, &grad)?;
        self.exploiting.step_value(&x_slice, &ret_e, self.params.value_weight)?;
        Ok(())
    }

    fn update_ppo(&mut self, steps: Vec<DoubleStep>, rng: &mut ChaCha8Rng) -> Result<(), AlgoError> {
        if steps.is_empty() {
            return Ok(());
        }
        let obs: Vec<Vec<f64>> = steps.iter().map(|s| s.obs.clone()).collect();
        let slices: Vec<Vec<f64>> = steps.iter().map(|s| s.slice.clone()).collect();
        let rewards: Vec<f64> = steps.iter().map(|s| s.reward).collect();
        let x_obs = to_matrix(&obs)?;
        let x_slice = to_matrix(&slices)?;
        let ([adv_s, adv_e], [ret_s, ret_e]) = self.advantages(&x_obs, &x_slice, &rewards)?;

        let mut order: Vec<usize> = (0..steps.len()).collect();
        for _ in 0..self.params.epochs.max(1) {
            order.shuffle(rng);
            for chunk in order.chunks(self.params.minibatch.max(1)) {
                self.ppo_minibatch(chunk, &steps, &x_obs, &x_slice, &adv_s, &adv_e, &ret_s, &ret_e)?;
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn ppo_minibatch(
        &mut self,
        chunk: &[usize],
        steps: &[DoubleStep],
        x_obs: &Array2<f64>,
        x_slice: &Array2<f64>,
        adv_s: &[f64],
        adv_e: &[f64],
        ret_s: &[f64],
        ret_e: &[f64],
    ) -> Result<(), AlgoError> {
        let m = chunk.len();
        let pick_rows = |x: &Array2<f64>| -> Array2<f64> {
            let mut out = Array2::zeros((m, x.ncols()));
            for (r, &i) in chunk.iter().enumerate() {
                out.row_mut(r).assign(&x.row(i));
            }
            out
        };
        let mb_obs = pick_rows(x_obs);
        let mb_slice = pick_rows(x_slice);

        // Each sub-agent gets its own ratio against its own stored log-prob
        // and its own advantages.
        for (selector, x) in [(0usize, &mb_obs), (1usize, &mb_slice)] {
            let pair = if selector == 0 { &self.structuring } else { &self.exploiting };
            let cache = pair.policy.forward_cached(x)?;
            let probs = cache.output().clone();

            let mut q_rows = Vec::with_capacity(m);
            let mut log_prob_new = Vec::with_capacity(m);
            let mut log_prob_old = Vec::with_capacity(m);
            let mut advantages = Vec::with_capacity(m);
            for (r, &i) in chunk.iter().enumerate() {
                let step = &steps[i];
                let (mask, chosen, old, adv) = if selector == 0 {
                    (&step.host_mask, step.host, step.log_prob_host, adv_s[i])
                } else {
                    (&step.kind_mask, step.kind, step.log_prob_kind, adv_e[i])
                };
                let (q, total) = masked_probs(probs.row(r).as_slice().unwrap(), mask)?;
                log_prob_new.push(q[chosen].max(PROB_FLOOR).ln());
                log_prob_old.push(old);
                advantages.push(adv);
                q_rows.push((q, total, chosen));
            }
            let surrogate =
                ppo_policy_loss(&log_prob_new, &log_prob_old, &advantages, self.params.clip)?;

            let mut grad = Array2::zeros(probs.dim());
            for (r, &i) in chunk.iter().enumerate() {
                let step = &steps[i];
                let mask = if selector == 0 { &step.host_mask } else { &step.kind_mask };
                let (q, total, chosen) = &q_rows[r];
                let mut grad_q = vec![0.0; q.len()];
                // d loss / d q_chosen = (d loss / d log q_chosen) / q_chosen
                grad_q[*chosen] += surrogate.grad_log_prob[r] / q[*chosen].max(PROB_FLOOR);
                if self.params.entropy_weight != 0.0 {
                    for j in 0..q.len() {
                        if mask[j] {
                            grad_q[j] += self.params.entropy_weight
                                * (q[j].max(PROB_FLOOR).ln() + 1.0)
                                / m as f64;
                        }
                    }
                }
                let grad_p = masked_renorm_backward(mask, q, *total, &grad_q);
                for (j, g) in grad_p.into_iter().enumerate() {
                    grad[[r, j]] = g;
                }
            }
            let targets: Vec<f64> = chunk
                .iter()
                .map(|&i| if selector == 0 { ret_s[i] } else { ret_e[i] })
                .collect();
            if selector == 0 {
                self.structuring.step_policy(&mb_obs, &grad)?;
                self.structuring.step_value(&mb_obs, &targets, self.params.value_weight)?;
            } else {
                self.exploiting.step_policy(&mb_slice, &grad)?;
                self.exploiting.step_value(&mb_slice, &targets, self.params.value_weight)?;
            }
        }
        Ok(())
    }
}
