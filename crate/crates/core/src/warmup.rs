//! Warmup phase: grow the goal set before training starts.
//!
//! A frozen, untrained policy explores for a fixed number of episodes with
//! only the study target as a goal. For every host it scans, the phase
//! records the best single-episode total reward earned by scanning actions
//! against that host. Each subnet then promotes its highest-recording host
//! (ties to the lowest host index, strictly positive records only) as a
//! dynamic goal node. Higher penalty scales push scan totals below zero, so
//! the promoted set shrinks as the terrain gets harsher.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::algos::{AlgoError, Policy};
use crate::env::{Env, EnvError};
use crate::net::HostAddress;

/// Where a goal node came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalOrigin {
    Target,
    Dynamic,
}

/// One node the agent must fully enumerate services on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalNode {
    pub address: HostAddress,
    pub origin: GoalOrigin,
    pub completion_reward: f64,
}

/// The full goal set: exactly one target plus at most one dynamic node per
/// subnet. Serializes as a plain JSON array of nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<GoalNode>", into = "Vec<GoalNode>")]
pub struct GoalSet {
    nodes: Vec<GoalNode>,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum GoalSetError {
    #[error("goal set must contain exactly one target node, found {0}")]
    TargetCount(usize),
    #[error("goal set lists {0} more than once")]
    DuplicateAddress(HostAddress),
    #[error("subnet {0} has more than one dynamic goal node")]
    SubnetOverflow(usize),
    #[error("completion reward for {0} must be non-negative")]
    NegativeReward(HostAddress),
}

impl GoalSet {
    pub fn new(nodes: Vec<GoalNode>) -> Result<Self, GoalSetError> {
        let targets = nodes
            .iter()
            .filter(|n| n.origin == GoalOrigin::Target)
            .count();
        if targets != 1 {
            return Err(GoalSetError::TargetCount(targets));
        }
        let mut seen = std::collections::BTreeSet::new();
        let mut dynamic_subnets = std::collections::BTreeSet::new();
        for node in &nodes {
            if !seen.insert(node.address) {
                return Err(GoalSetError::DuplicateAddress(node.address));
            }
            if node.completion_reward < 0.0 {
                return Err(GoalSetError::NegativeReward(node.address));
            }
            if node.origin == GoalOrigin::Dynamic
                && !dynamic_subnets.insert(node.address.subnet())
            {
                return Err(GoalSetError::SubnetOverflow(node.address.subnet()));
            }
        }
        Ok(GoalSet { nodes })
    }

    /// A goal set holding just the study target.
    pub fn single_target(address: HostAddress, completion_reward: f64) -> Self {
        GoalSet {
            nodes: vec![GoalNode {
                address,
                origin: GoalOrigin::Target,
                completion_reward,
            }],
        }
    }

    pub fn target(&self) -> Option<&GoalNode> {
        self.nodes.iter().find(|n| n.origin == GoalOrigin::Target)
    }

    pub fn iter(&self) -> impl Iterator<Item = &GoalNode> {
        self.nodes.iter()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn dynamic_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.origin == GoalOrigin::Dynamic)
            .count()
    }

    pub fn contains(&self, address: HostAddress) -> bool {
        self.nodes.iter().any(|n| n.address == address)
    }
}

impl TryFrom<Vec<GoalNode>> for GoalSet {
    type Error = GoalSetError;
    fn try_from(nodes: Vec<GoalNode>) -> Result<Self, GoalSetError> {
        GoalSet::new(nodes)
    }
}

impl From<GoalSet> for Vec<GoalNode> {
    fn from(set: GoalSet) -> Vec<GoalNode> {
        set.nodes
    }
}

/// Warmup phase parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmupConfig {
    #[serde(default = "default_warmup_episodes")]
    pub episodes: usize,
}

fn default_warmup_episodes() -> usize {
    100
}

impl Default for WarmupConfig {
    fn default() -> Self {
        WarmupConfig {
            episodes: default_warmup_episodes(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WarmupError {
    #[error("warmup requires at least one episode")]
    NoEpisodes,
    #[error("warmup environment must carry a target goal")]
    NoTarget,
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] AlgoError),
    #[error(transparent)]
    GoalSet(#[from] GoalSetError),
}

/// Per-subnet promotion: for every subnet with at least one strictly
/// positive record, the argmax-record host, ties to the lowest host index.
pub fn subnet_candidates(records: &BTreeMap<HostAddress, f64>) -> BTreeMap<usize, HostAddress> {
    let mut best: BTreeMap<usize, (f64, HostAddress)> = BTreeMap::new();
    for (&address, &reward) in records {
        if reward <= 0.0 {
            continue;
        }
        match best.get(&address.subnet()) {
            // Strict inequality keeps the lowest host index on ties because
            // records iterate in address order.
            Some(&(prev, _)) if prev >= reward => {}
            _ => {
                best.insert(address.subnet(), (reward, address));
            }
        }
    }
    best.into_iter().map(|(s, (_, a))| (s, a)).collect()
}

/// Runs the warmup phase with a frozen policy and returns the grown goal
/// set. `env` must be built over the bare target goal set; the policy is
/// only sampled, never updated.
pub fn run_warmup<P: Policy + ?Sized>(
    env: &Env,
    cfg: &WarmupConfig,
    policy: &P,
    rng: &mut ChaCha8Rng,
) -> Result<GoalSet, WarmupError> {
    if cfg.episodes == 0 {
        return Err(WarmupError::NoEpisodes);
    }
    let target = env.goals().target().ok_or(WarmupError::NoTarget)?.clone();

    let mut best: BTreeMap<HostAddress, f64> = BTreeMap::new();
    for _ in 0..cfg.episodes {
        let mut state = env.reset();
        let mut episode_totals: BTreeMap<HostAddress, f64> = BTreeMap::new();
        while !state.done() {
            let choice = policy.sample(env, &state, rng)?;
            let (next, reward, _, _) = env.step(&state, choice.action)?;
            if choice.action.kind.is_scan() {
                *episode_totals.entry(choice.action.target).or_insert(0.0) += reward.total();
            }
            state = next;
        }
        for (address, total) in episode_totals {
            let entry = best.entry(address).or_insert(f64::NEG_INFINITY);
            if total > *entry {
                *entry = total;
            }
        }
    }

    best.remove(&target.address);
    let mut nodes = vec![target.clone()];
    for (_, address) in subnet_candidates(&best) {
        nodes.push(GoalNode {
            address,
            origin: GoalOrigin::Dynamic,
            completion_reward: target.completion_reward,
        });
    }
    Ok(GoalSet::new(nodes)?)
}
