//! The episodic MDP: states over host knowledge, six primitive actions,
//! service-discovery rewards, goal bonuses and terrain penalties.
//!
//! Knowledge only grows during an episode. Every action is charged the
//! terrain penalty of its target host (for subnet sweeps, of the worst host
//! the sweep touches) whether or not the attempt is valid, so noisy probing
//! is costly but never fatal. An episode ends when every goal node has had
//! all of its services revealed, or at the step limit.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::net::{reachable_hosts, HostAddress, NetworkConfig};
use crate::terrain::{
    base_penalty, scaled_penalty, worst_category, PenaltyScale, ServiceCategory, TerrainError,
};
use crate::warmup::GoalSet;

/// The six primitive action kinds, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    ServiceScan,
    OsScan,
    SubnetScan,
    ProcessScan,
    Exploit,
    PrivilegeEscalation,
}

impl ActionKind {
    pub const ALL: [ActionKind; 6] = [
        ActionKind::ServiceScan,
        ActionKind::OsScan,
        ActionKind::SubnetScan,
        ActionKind::ProcessScan,
        ActionKind::Exploit,
        ActionKind::PrivilegeEscalation,
    ];

    /// Exploit-family actions use the harsher penalty row.
    pub fn is_exploit(self) -> bool {
        matches!(self, ActionKind::Exploit | ActionKind::PrivilegeEscalation)
    }

    pub fn is_scan(self) -> bool {
        !self.is_exploit()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::ServiceScan => "service_scan",
            ActionKind::OsScan => "os_scan",
            ActionKind::SubnetScan => "subnet_scan",
            ActionKind::ProcessScan => "process_scan",
            ActionKind::Exploit => "exploit",
            ActionKind::PrivilegeEscalation => "privilege_escalation",
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One primitive action against one host.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub target: HostAddress,
    pub kind: ActionKind,
}

/// MDP parameters for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpConfig {
    pub initial_host: HostAddress,
    pub target_host: HostAddress,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_step_limit")]
    pub step_limit: usize,
    #[serde(default = "default_goal_reward")]
    pub goal_reward: f64,
    #[serde(default = "default_discovery_reward")]
    pub discovery_reward: f64,
    #[serde(default = "default_scale")]
    pub penalty_scale: PenaltyScale,
}

fn default_gamma() -> f64 {
    0.99
}

fn default_step_limit() -> usize {
    3000
}

fn default_goal_reward() -> f64 {
    100.0
}

fn default_discovery_reward() -> f64 {
    1.0
}

fn default_scale() -> PenaltyScale {
    PenaltyScale::ONE
}

/// Attacker knowledge about one host.
#[derive(Debug, Clone, PartialEq)]
pub struct HostState {
    pub compromised: bool,
    pub reachable: bool,
    pub discovered: bool,
    pub os_discovered: bool,
    pub services_discovered: Vec<bool>,
    pub processes_discovered: Vec<bool>,
}

impl HostState {
    fn all_services_discovered(&self) -> bool {
        self.services_discovered.iter().all(|&b| b)
    }
}

/// Full episode state. Produced by [`Env::reset`] and advanced functionally
/// by [`Env::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub hosts: Vec<HostState>,
    pub step_count: usize,
    goal_paid: Vec<bool>,
    done: bool,
}

impl EnvState {
    pub fn done(&self) -> bool {
        self.done
    }

    pub fn goals_paid(&self) -> usize {
        self.goal_paid.iter().filter(|&&p| p).count()
    }
}

/// Per-step reward components. `total = discovery + goal + penalty` always.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub discovery: f64,
    pub goal: f64,
    pub penalty: f64,
}

impl RewardBreakdown {
    pub fn total(&self) -> f64 {
        self.discovery + self.goal + self.penalty
    }
}

/// Side information about one step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepInfo {
    /// Set when the action had no effect: unreachable target or an unmet
    /// exploit / escalation precondition. The penalty is still charged.
    pub invalid_target: bool,
    pub newly_discovered_services: usize,
    pub goals_completed: Vec<HostAddress>,
}

/// How [`Env::action_mask`] decides validity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// An action is valid when its target is reachable.
    Reachable,
    /// Reachable and guaranteed to change the state: no repeat scans of
    /// fully known attributes, no re-exploits. Falls back to `Reachable`
    /// if nothing qualifies.
    Progressive,
}

/// Flat observation vector; fixed length for a given network.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum EnvError {
    #[error("goal set does not include the configured target {0}")]
    TargetMissing(HostAddress),
    #[error("goal node {0} is not a host in the network")]
    UnknownGoalHost(HostAddress),
    #[error("host {0} is not in the network")]
    UnknownHost(HostAddress),
    #[error("episode already finished; reset before stepping")]
    EpisodeFinished,
    #[error("invalid goal set: {0}")]
    GoalSet(String),
    #[error(transparent)]
    Terrain(#[from] TerrainError),
    #[error("network error: {0}")]
    Net(String),
}

struct HostMeta {
    address: HostAddress,
    spec_index: usize,
    service_count: usize,
    process_count: usize,
    os_index: usize,
    category: ServiceCategory,
}

/// One environment: an immutable network plus MDP parameters and goals.
pub struct Env {
    net: Arc<NetworkConfig>,
    cfg: MdpConfig,
    goals: GoalSet,
    hosts: Vec<HostMeta>,
    subnet_category: Vec<Option<ServiceCategory>>,
    subnet_members: Vec<Vec<usize>>,
    actions: Vec<Action>,
    os_names: Vec<String>,
    slice_len: usize,
    max_services: usize,
    max_subnet_size: usize,
    initial_index: usize,
}

impl Env {
    pub fn new(net: Arc<NetworkConfig>, cfg: MdpConfig, goals: GoalSet) -> Result<Self, EnvError> {
        let target = goals
            .target()
            .ok_or_else(|| EnvError::GoalSet("goal set has no target node".into()))?;
        if target.address != cfg.target_host {
            return Err(EnvError::TargetMissing(cfg.target_host));
        }
        for node in goals.iter() {
            if net.host(node.address).is_none() {
                return Err(EnvError::UnknownGoalHost(node.address));
            }
        }
        if net.host(cfg.initial_host).is_none() {
            return Err(EnvError::UnknownHost(cfg.initial_host));
        }

        let mut order: Vec<usize> = (0..net.hosts.len()).collect();
        order.sort_by_key(|&i| net.hosts[i].address);

        let mut os_names: Vec<String> = net.hosts.iter().map(|h| h.os.clone()).collect();
        os_names.sort();
        os_names.dedup();

        let mut hosts = Vec::with_capacity(order.len());
        for &spec_index in &order {
            let spec = &net.hosts[spec_index];
            let category = worst_category(&spec.services, &net.service_catalog)?;
            hosts.push(HostMeta {
                address: spec.address,
                spec_index,
                service_count: spec.services.len(),
                process_count: spec.processes.len(),
                os_index: os_names.iter().position(|o| *o == spec.os).unwrap(),
                category,
            });
        }

        let mut subnet_category: Vec<Option<ServiceCategory>> = vec![None; net.subnets.len()];
        let mut subnet_members: Vec<Vec<usize>> = vec![Vec::new(); net.subnets.len()];
        for (idx, meta) in hosts.iter().enumerate() {
            let s = meta.address.subnet();
            subnet_members[s].push(idx);
            subnet_category[s] = Some(match subnet_category[s] {
                Some(prev) if prev.rank() >= meta.category.rank() => prev,
                _ => meta.category,
            });
        }

        let actions: Vec<Action> = hosts
            .iter()
            .flat_map(|meta| {
                ActionKind::ALL.iter().map(move |&kind| Action {
                    target: meta.address,
                    kind,
                })
            })
            .collect();

        let max_services = hosts.iter().map(|h| h.service_count).max().unwrap_or(0);
        let max_processes = hosts.iter().map(|h| h.process_count).max().unwrap_or(0);
        let max_subnet_size = net.subnets.iter().copied().max().unwrap_or(0);
        let slice_len =
            3 + net.subnets.len() + max_subnet_size + max_services + os_names.len() + max_processes;
        let initial_index = hosts
            .iter()
            .position(|h| h.address == cfg.initial_host)
            .expect("initial host present");

        Ok(Env {
            net,
            cfg,
            goals,
            hosts,
            subnet_category,
            subnet_members,
            actions,
            os_names,
            slice_len,
            max_services,
            max_subnet_size,
            initial_index,
        })
    }

    pub fn network(&self) -> &NetworkConfig {
        &self.net
    }

    pub fn config(&self) -> &MdpConfig {
        &self.cfg
    }

    pub fn goals(&self) -> &GoalSet {
        &self.goals
    }

    pub fn num_hosts(&self) -> usize {
        self.hosts.len()
    }

    pub fn host_address(&self, index: usize) -> HostAddress {
        self.hosts[index].address
    }

    pub fn host_index(&self, address: HostAddress) -> Option<usize> {
        self.hosts.iter().position(|h| h.address == address)
    }

    /// Canonical action list: hosts in address order, kinds in declaration
    /// order within each host.
    pub fn action_space(&self) -> &[Action] {
        &self.actions
    }

    pub fn action_index(&self, action: Action) -> Option<usize> {
        let host = self.host_index(action.target)?;
        let kind = ActionKind::ALL.iter().position(|&k| k == action.kind)?;
        Some(host * ActionKind::ALL.len() + kind)
    }

    pub fn observation_len(&self) -> usize {
        self.slice_len * self.hosts.len()
    }

    /// Length of one host's feature slice.
    pub fn slice_len(&self) -> usize {
        self.slice_len
    }

    pub fn reset(&self) -> EnvState {
        let mut hosts: Vec<HostState> = self
            .hosts
            .iter()
            .map(|meta| HostState {
                compromised: false,
                reachable: false,
                discovered: false,
                os_discovered: false,
                services_discovered: vec![false; meta.service_count],
                processes_discovered: vec![false; meta.process_count],
            })
            .collect();
        hosts[self.initial_index].compromised = true;
        hosts[self.initial_index].discovered = true;
        let mut state = EnvState {
            hosts,
            step_count: 0,
            goal_paid: vec![false; self.goals.len()],
            done: false,
        };
        self.recompute_reachability(&mut state);
        state
    }

    fn recompute_reachability(&self, state: &mut EnvState) {
        let compromised: BTreeSet<HostAddress> = self
            .hosts
            .iter()
            .zip(&state.hosts)
            .filter(|(_, h)| h.compromised)
            .map(|(meta, _)| meta.address)
            .collect();
        let reach = reachable_hosts(&self.net, &compromised).expect("hosts are known");
        for (meta, host) in self.hosts.iter().zip(&mut state.hosts) {
            host.reachable = reach.contains(&meta.address);
        }
    }

    fn penalty_for(&self, host_idx: usize, kind: ActionKind) -> f64 {
        let category = if kind == ActionKind::SubnetScan {
            let subnet = self.hosts[host_idx].address.subnet();
            self.subnet_category[subnet].expect("targeted subnet has hosts")
        } else {
            self.hosts[host_idx].category
        };
        scaled_penalty(base_penalty(category, kind), self.cfg.penalty_scale)
            .expect("base penalties are negative")
    }

    /// Reveals every service on `host_idx`; returns how many were new.
    fn reveal_services(&self, state: &mut EnvState, host_idx: usize) -> usize {
        let flags = &mut state.hosts[host_idx].services_discovered;
        let mut new = 0;
        for flag in flags.iter_mut() {
            if !*flag {
                *flag = true;
                new += 1;
            }
        }
        new
    }

    /// Advances `state` by one action. Returns the successor state, the
    /// reward breakdown, the done flag and step info.
    pub fn step(
        &self,
        state: &EnvState,
        action: Action,
    ) -> Result<(EnvState, RewardBreakdown, bool, StepInfo), EnvError> {
        if state.done {
            return Err(EnvError::EpisodeFinished);
        }
        let host_idx = self
            .host_index(action.target)
            .ok_or(EnvError::UnknownHost(action.target))?;

        let mut next = state.clone();
        let mut info = StepInfo::default();
        let mut breakdown = RewardBreakdown {
            penalty: self.penalty_for(host_idx, action.kind),
            ..RewardBreakdown::default()
        };

        let reachable = next.hosts[host_idx].reachable;
        let mut new_services = 0;
        match action.kind {
            ActionKind::ServiceScan => {
                if reachable {
                    next.hosts[host_idx].discovered = true;
                    new_services += self.reveal_services(&mut next, host_idx);
                } else {
                    info.invalid_target = true;
                }
            }
            ActionKind::OsScan => {
                if reachable {
                    next.hosts[host_idx].discovered = true;
                    next.hosts[host_idx].os_discovered = true;
                } else {
                    info.invalid_target = true;
                }
            }
            ActionKind::SubnetScan => {
                if reachable {
                    let subnet = self.hosts[host_idx].address.subnet();
                    for &member in &self.subnet_members[subnet] {
                        next.hosts[member].discovered = true;
                    }
                } else {
                    info.invalid_target = true;
                }
            }
            ActionKind::ProcessScan => {
                if reachable {
                    next.hosts[host_idx].discovered = true;
                    for flag in next.hosts[host_idx].processes_discovered.iter_mut() {
                        *flag = true;
                    }
                } else {
                    info.invalid_target = true;
                }
            }
            ActionKind::Exploit => {
                if reachable && next.hosts[host_idx].discovered {
                    if !next.hosts[host_idx].compromised {
                        next.hosts[host_idx].compromised = true;
                        let bounty = self.net.hosts[self.hosts[host_idx].spec_index].compromise_value;
                        breakdown.goal += bounty;
                        self.recompute_reachability(&mut next);
                    }
                } else {
                    info.invalid_target = true;
                }
            }
            ActionKind::PrivilegeEscalation => {
                if next.hosts[host_idx].compromised {
                    let subnet = self.hosts[host_idx].address.subnet();
                    for &member in &self.subnet_members[subnet] {
                        next.hosts[member].discovered = true;
                        new_services += self.reveal_services(&mut next, member);
                    }
                } else {
                    info.invalid_target = true;
                }
            }
        }

        info.newly_discovered_services = new_services;
        breakdown.discovery = new_services as f64 * self.cfg.discovery_reward;

        for (goal_idx, node) in self.goals.iter().enumerate() {
            if next.goal_paid[goal_idx] {
                continue;
            }
            let idx = self
                .host_index(node.address)
                .expect("goal hosts validated at construction");
            if next.hosts[idx].all_services_discovered() {
                next.goal_paid[goal_idx] = true;
                breakdown.goal += node.completion_reward;
                info.goals_completed.push(node.address);
            }
        }

        next.step_count += 1;
        let all_goals = next.goal_paid.iter().all(|&p| p);
        next.done = all_goals || next.step_count >= self.cfg.step_limit;

        let done = next.done;
        Ok((next, breakdown, done, info))
    }

    /// Encodes a state as the concatenation of per-host feature slices:
    /// status bits, address one-hots, service bits, OS one-hot and process
    /// bits. Configuration sections stay zero until the matching knowledge
    /// has been gathered.
    pub fn encode(&self, state: &EnvState) -> Observation {
        let mut values = vec![0.0; self.observation_len()];
        for (idx, meta) in self.hosts.iter().enumerate() {
            let host = &state.hosts[idx];
            let base = idx * self.slice_len;
            values[base] = host.compromised as u8 as f64;
            values[base + 1] = host.reachable as u8 as f64;
            values[base + 2] = host.discovered as u8 as f64;
            let mut offset = base + 3;
            if host.discovered {
                values[offset + meta.address.subnet()] = 1.0;
                values[offset + self.net.subnets.len() + meta.address.host()] = 1.0;
            }
            offset += self.net.subnets.len() + self.max_subnet_size;
            for (i, &revealed) in host.services_discovered.iter().enumerate() {
                if revealed {
                    values[offset + i] = 1.0;
                }
            }
            offset += self.max_services;
            if host.os_discovered {
                values[offset + meta.os_index] = 1.0;
            }
            offset += self.os_names.len();
            for (i, &revealed) in host.processes_discovered.iter().enumerate() {
                if revealed {
                    values[offset + i] = 1.0;
                }
            }
        }
        Observation(values)
    }

    /// The feature slice of one host inside [`Env::encode`]'s layout.
    pub fn encode_host_slice(&self, observation: &Observation, host_idx: usize) -> Vec<f64> {
        let base = host_idx * self.slice_len;
        observation.0[base..base + self.slice_len].to_vec()
    }

    /// Validity flags over the canonical action space.
    pub fn action_mask(&self, state: &EnvState, mode: MaskMode) -> Vec<bool> {
        let reachable_mask: Vec<bool> = self
            .actions
            .iter()
            .map(|a| {
                let idx = self.host_index(a.target).unwrap();
                state.hosts[idx].reachable
            })
            .collect();
        if mode == MaskMode::Reachable {
            return reachable_mask;
        }
        let progressive: Vec<bool> = self
            .actions
            .iter()
            .enumerate()
            .map(|(i, action)| {
                if !reachable_mask[i] {
                    return false;
                }
                let idx = self.host_index(action.target).unwrap();
                let host = &state.hosts[idx];
                match action.kind {
                    ActionKind::ServiceScan => {
                        !host.discovered || !host.all_services_discovered()
                    }
                    ActionKind::OsScan => !host.os_discovered,
                    ActionKind::ProcessScan => {
                        !host.discovered || host.processes_discovered.iter().any(|&p| !p)
                    }
                    ActionKind::SubnetScan => {
                        let subnet = self.hosts[idx].address.subnet();
                        self.subnet_members[subnet]
                            .iter()
                            .any(|&m| !state.hosts[m].discovered)
                    }
                    ActionKind::Exploit => host.discovered && !host.compromised,
                    ActionKind::PrivilegeEscalation => {
                        if !host.compromised {
                            return false;
                        }
                        let subnet = self.hosts[idx].address.subnet();
                        self.subnet_members[subnet].iter().any(|&m| {
                            !state.hosts[m].discovered
                                || !state.hosts[m].all_services_discovered()
                        })
                    }
                }
            })
            .collect();
        if progressive.iter().any(|&v| v) {
            progressive
        } else {
            reachable_mask
        }
    }

    /// Serializes steps as JSON lines, one record per step.
    pub fn trace_to_jsonl(steps: &[TraceRecord]) -> String {
        steps
            .iter()
            .map(|r| serde_json::to_string(r).expect("trace serializes"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// One step of an episode trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub action: Action,
    pub reward: TraceReward,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceReward {
    pub discovery: f64,
    pub goal: f64,
    pub penalty: f64,
    pub total: f64,
}

impl TraceRecord {
    pub fn new(step: usize, action: Action, reward: RewardBreakdown, done: bool) -> Self {
        TraceRecord {
            step,
            action,
            reward: TraceReward {
                discovery: reward.discovery,
                goal: reward.goal,
                penalty: reward.penalty,
                total: reward.total(),
            },
            done,
        }
    }
}
