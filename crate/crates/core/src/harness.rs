//! Run orchestration: configuration files, the train / evaluate / sweep
//! entry points and every artifact format they read or write.
//!
//! A run is fully described by a [`RunConfig`]. Determinism contract: the
//! same config (with `record_wall_time` off) produces byte-identical
//! artifacts. Randomness is drawn from ChaCha8 streams derived from the run
//! seed — stream 0 initializes parameters, stream 1 drives warmup
//! exploration, stream 2 drives training — so phases cannot perturb each
//! other.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::algos::{AlgoError, AlgoParams, Algorithm, AnyAgent};
use crate::env::{Env, EnvError, MaskMode, MdpConfig, TraceRecord};
use crate::net::{parse_network_config, reference, HostAddress, NetError, NetworkConfig};
use crate::terrain::{PenaltyScale, RiskTier, TerrainError};
use crate::warmup::{run_warmup, GoalSet, WarmupConfig, WarmupError};

const STREAM_INIT: u64 = 0;
const STREAM_WARMUP: u64 = 1;
const STREAM_TRAIN: u64 = 2;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Algo(#[from] AlgoError),
    #[error(transparent)]
    Warmup(#[from] WarmupError),
    #[error(transparent)]
    Terrain(#[from] TerrainError),
    #[error("{0}")]
    Config(String),
}

/// Where the network comes from: the literal string `reference` for the
/// built-in topology, anything else is a path to a network JSON file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NetworkSource(pub String);

impl NetworkSource {
    pub fn reference() -> Self {
        NetworkSource("reference".to_string())
    }

    pub fn is_reference(&self) -> bool {
        self.0 == "reference"
    }

    pub fn load(&self) -> Result<NetworkConfig, HarnessError> {
        if self.is_reference() {
            return Ok(reference::reference_network());
        }
        let text = std::fs::read_to_string(&self.0)?;
        Ok(parse_network_config(&text)?)
    }
}

impl Default for NetworkSource {
    fn default() -> Self {
        NetworkSource::reference()
    }
}

/// MDP knobs that do not name hosts; combined with the initial host and the
/// target to form an [`MdpConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpSection {
    #[serde(default = "d_gamma")]
    pub gamma: f64,
    #[serde(default = "d_step_limit")]
    pub step_limit: usize,
    #[serde(default = "d_goal_reward")]
    pub goal_reward: f64,
    #[serde(default = "d_discovery_reward")]
    pub discovery_reward: f64,
    #[serde(default = "d_penalty_scale")]
    pub penalty_scale: PenaltyScale,
}

fn d_gamma() -> f64 {
    0.99
}
fn d_step_limit() -> usize {
    3000
}
fn d_goal_reward() -> f64 {
    100.0
}
fn d_discovery_reward() -> f64 {
    1.0
}
fn d_penalty_scale() -> PenaltyScale {
    PenaltyScale::ONE
}
fn d_mask_mode() -> MaskMode {
    MaskMode::Progressive
}

impl Default for MdpSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults are total")
    }
}

/// Everything one training run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub network: NetworkSource,
    pub algorithm: Algorithm,
    /// Study target; required for `train`, supplied per cell in sweeps.
    #[serde(default)]
    pub target: Option<HostAddress>,
    /// Attacker foothold; defaults to the reference network's entry host.
    #[serde(default)]
    pub initial: Option<HostAddress>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mdp: MdpSection,
    #[serde(default)]
    pub algo: AlgoParams,
    #[serde(default)]
    pub warmup: WarmupConfig,
    #[serde(default = "d_mask_mode")]
    pub mask_mode: MaskMode,
    /// When off (the default) the metrics CSV reports `wall_ms` as zero so
    /// repeated runs stay byte-identical.
    #[serde(default)]
    pub record_wall_time: bool,
}

impl RunConfig {
    pub fn new(algorithm: Algorithm, target: HostAddress) -> Self {
        RunConfig {
            network: NetworkSource::reference(),
            algorithm,
            target: Some(target),
            initial: None,
            seed: 0,
            mdp: MdpSection::default(),
            algo: AlgoParams::default(),
            warmup: WarmupConfig::default(),
            mask_mode: MaskMode::Progressive,
            record_wall_time: false,
        }
    }

    pub fn target(&self) -> Result<HostAddress, HarnessError> {
        self.target
            .ok_or_else(|| HarnessError::Config("config does not name a target host".into()))
    }

    pub fn initial_host(&self) -> Result<HostAddress, HarnessError> {
        match self.initial {
            Some(address) => Ok(address),
            None if self.network.is_reference() => Ok(reference::INITIAL_HOST),
            None => Err(HarnessError::Config(
                "config needs an `initial` host when the network is not `reference`".into(),
            )),
        }
    }

    pub fn mdp_config(&self) -> Result<MdpConfig, HarnessError> {
        Ok(MdpConfig {
            initial_host: self.initial_host()?,
            target_host: self.target()?,
            gamma: self.mdp.gamma,
            step_limit: self.mdp.step_limit,
            goal_reward: self.mdp.goal_reward,
            discovery_reward: self.mdp.discovery_reward,
            penalty_scale: self.mdp.penalty_scale,
        })
    }

    pub fn build_env(
        &self,
        net: Arc<NetworkConfig>,
        goals: GoalSet,
    ) -> Result<Env, HarnessError> {
        Ok(Env::new(net, self.mdp_config()?, goals)?)
    }
}

pub fn load_run_config(path: &Path) -> Result<RunConfig, HarnessError> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// One row of the training metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMetric {
    pub episode: usize,
    pub reward: f64,
    pub steps: usize,
    pub wall_ms: u64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub agent: AnyAgent,
    pub goal_set: GoalSet,
    pub metrics: Vec<EpisodeMetric>,
}

/// Runs warmup then the full training loop.
pub fn train(cfg: &RunConfig) -> Result<TrainOutcome, HarnessError> {
    train_with(cfg, |_| {})
}

pub fn train_with(
    cfg: &RunConfig,
    mut progress: impl FnMut(&EpisodeMetric),
) -> Result<TrainOutcome, HarnessError> {
    let net = Arc::new(cfg.network.load()?);
    let mdp = cfg.mdp_config()?;
    let target = cfg.target()?;

    let warm_goals = GoalSet::single_target(target, mdp.goal_reward);
    let warm_env = Env::new(net.clone(), mdp.clone(), warm_goals)?;

    let mut rng_init = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng_init.set_stream(STREAM_INIT);
    let mut agent = AnyAgent::new(
        cfg.algorithm,
        &warm_env,
        cfg.algo.clone(),
        cfg.mask_mode,
        &mut rng_init,
    )?;

    let mut rng_warmup = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng_warmup.set_stream(STREAM_WARMUP);
    let goal_set = run_warmup(&warm_env, &cfg.warmup, &agent, &mut rng_warmup)?;

    let env = Env::new(net, mdp, goal_set.clone())?;
    let mut rng_train = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng_train.set_stream(STREAM_TRAIN);

    let mut metrics = Vec::with_capacity(cfg.algo.episodes);
    for episode in 0..cfg.algo.episodes {
        let started = cfg.record_wall_time.then(Instant::now);
        let summary = agent.train_episode(&env, &mut rng_train)?;
        let metric = EpisodeMetric {
            episode,
            reward: summary.reward,
            steps: summary.steps,
            wall_ms: started.map(|t| t.elapsed().as_millis() as u64).unwrap_or(0),
        };
        progress(&metric);
        metrics.push(metric);
    }
    Ok(TrainOutcome { agent, goal_set, metrics })
}

/// A greedy rollout with its audit summary. `high/medium/low exposure`
/// count the hosts the route compromised (the seeded foothold excluded),
/// bucketed by risk tier; `services_enumerated` counts every service
/// discovered anywhere by the end of the rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdrPath {
    pub target: HostAddress,
    pub total_reward: f64,
    pub steps: usize,
    pub services_enumerated: usize,
    pub high_exposure: usize,
    pub medium_exposure: usize,
    pub low_exposure: usize,
    pub goals_completed: usize,
    pub goal_count: usize,
    pub completed: bool,
    pub compromised: Vec<HostAddress>,
    pub discovered: Vec<HostAddress>,
    pub trace: Vec<TraceRecord>,
}

/// Greedy evaluation of a trained agent on `env`.
pub fn evaluate(env: &Env, agent: &AnyAgent) -> Result<SdrPath, HarnessError> {
    let mut state = env.reset();
    let mut trace = Vec::new();
    let mut total_reward = 0.0;
    while !state.done() {
        let action = agent.greedy_action(env, &state)?;
        let (next, reward, done, _) = env.step(&state, action)?;
        trace.push(TraceRecord::new(trace.len(), action, reward, done));
        total_reward += reward.total();
        state = next;
    }

    let initial = env.config().initial_host;
    let mut compromised = Vec::new();
    let mut discovered = Vec::new();
    let mut services = 0usize;
    let (mut high, mut medium, mut low) = (0usize, 0usize, 0usize);
    for idx in 0..env.num_hosts() {
        let address = env.host_address(idx);
        let host = &state.hosts[idx];
        services += host.services_discovered.iter().filter(|&&b| b).count();
        if host.discovered {
            discovered.push(address);
        }
        if host.compromised {
            compromised.push(address);
            if address != initial {
                match env.network().risk_tier(address)? {
                    RiskTier::High => high += 1,
                    RiskTier::Medium => medium += 1,
                    RiskTier::Low => low += 1,
                }
            }
        }
    }

    Ok(SdrPath {
        target: env.config().target_host,
        total_reward,
        steps: trace.len(),
        services_enumerated: services,
        high_exposure: high,
        medium_exposure: medium,
        low_exposure: low,
        goals_completed: state.goals_paid(),
        goal_count: env.goals().len(),
        completed: state.goals_paid() == env.goals().len(),
        compromised,
        discovered,
        trace,
    })
}

/// Reward moving average with a trailing window of `min(window, t + 1)`.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for t in 0..values.len() {
        sum += values[t];
        if t >= window {
            sum -= values[t - window];
        }
        out.push(sum / window.min(t + 1) as f64);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceStats {
    /// First episode from which the moving average stays inside the band
    /// around the final mean for the rest of training.
    pub plateau_episode: Option<usize>,
    /// Mean reward over the trailing evaluation span.
    pub final_mean: f64,
}

/// Plateau detection: the moving average (window `window`) must stay within
/// `tolerance` of the mean over the final `tail` episodes, relatively for
/// large means and absolutely once the mean is below one reward unit.
pub fn convergence_stats(
    rewards: &[f64],
    window: usize,
    tail: usize,
    tolerance: f64,
) -> ConvergenceStats {
    if rewards.is_empty() {
        return ConvergenceStats { plateau_episode: None, final_mean: 0.0 };
    }
    let span = tail.min(rewards.len());
    let final_mean = rewards[rewards.len() - span..].iter().sum::<f64>() / span as f64;
    let band = tolerance * final_mean.abs().max(1.0);
    let averages = moving_average(rewards, window);
    let mut plateau = None;
    for e in (0..rewards.len()).rev() {
        if (averages[e] - final_mean).abs() <= band {
            plateau = Some(e);
        } else {
            break;
        }
    }
    ConvergenceStats { plateau_episode: plateau, final_mean }
}

// ---------------------------------------------------------------------------
// Sweeps

/// One sweep cell: a full training run at this target, scale and seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub target: HostAddress,
    pub scale: f64,
    pub seed: u64,
}

/// Cross product of targets, scales and seeds, plus any extra cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub run: RunConfig,
    pub targets: Vec<HostAddress>,
    pub scales: Vec<f64>,
    #[serde(default = "d_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub extra_cells: Vec<SweepCell>,
}

fn d_seeds() -> Vec<u64> {
    vec![0]
}

impl SweepConfig {
    /// Deduplicated cells in canonical order (target, scale, seed).
    pub fn cells(&self) -> Vec<SweepCell> {
        let mut cells = Vec::new();
        for &target in &self.targets {
            for &scale in &self.scales {
                for &seed in &self.seeds {
                    cells.push(SweepCell { target, scale, seed });
                }
            }
        }
        cells.extend(self.extra_cells.iter().copied());
        cells.sort_by(cell_order);
        cells.dedup_by(|a, b| cell_order(a, b) == std::cmp::Ordering::Equal);
        cells
    }
}

fn cell_order(a: &SweepCell, b: &SweepCell) -> std::cmp::Ordering {
    a.target
        .cmp(&b.target)
        .then(a.scale.total_cmp(&b.scale))
        .then(a.seed.cmp(&b.seed))
}

pub fn load_sweep_config(path: &Path) -> Result<SweepConfig, HarnessError> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// One sweep result row. `goal_completed` is `true`, `false` or `error`
/// (the cell failed to train or evaluate; counters read zero).
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub target: HostAddress,
    pub scale: f64,
    pub seed: u64,
    pub services: usize,
    pub high: usize,
    pub medium: usize,
    pub low: usize,
    pub goal_completed: String,
}

fn run_cell(base: &RunConfig, cell: &SweepCell) -> Result<SweepRow, HarnessError> {
    let mut cfg = base.clone();
    cfg.target = Some(cell.target);
    cfg.seed = cell.seed;
    cfg.mdp.penalty_scale = PenaltyScale::new(cell.scale)?;
    let outcome = train(&cfg)?;
    let net = Arc::new(cfg.network.load()?);
    let env = cfg.build_env(net, outcome.goal_set.clone())?;
    let path = evaluate(&env, &outcome.agent)?;
    Ok(SweepRow {
        target: cell.target,
        scale: cell.scale,
        seed: cell.seed,
        services: path.services_enumerated,
        high: path.high_exposure,
        medium: path.medium_exposure,
        low: path.low_exposure,
        goal_completed: path.completed.to_string(),
    })
}

pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>, HarnessError> {
    run_sweep_with(cfg, |_| {})
}

/// Runs every cell on a small worker pool. Rows come back in canonical
/// order regardless of scheduling; per-cell seeds keep results independent
/// of thread interleaving.
pub fn run_sweep_with(
    cfg: &SweepConfig,
    mut progress: impl FnMut(&SweepRow),
) -> Result<Vec<SweepRow>, HarnessError> {
    let cells = cfg.cells();
    if cells.is_empty() {
        return Err(HarnessError::Config("sweep has no cells".into()));
    }
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(cells.len());
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<SweepRow>();

    let mut rows: Vec<SweepRow> = Vec::with_capacity(cells.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            let cells = &cells;
            let base = &cfg.run;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= cells.len() {
                    break;
                }
                let cell = cells[i];
                let row = run_cell(base, &cell).unwrap_or(SweepRow {
                    target: cell.target,
                    scale: cell.scale,
                    seed: cell.seed,
                    services: 0,
                    high: 0,
                    medium: 0,
                    low: 0,
                    goal_completed: "error".to_string(),
                });
                if tx.send(row).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for row in rx {
            progress(&row);
            rows.push(row);
        }
    });
    rows.sort_by(|a, b| {
        cell_order(
            &SweepCell { target: a.target, scale: a.scale, seed: a.seed },
            &SweepCell { target: b.target, scale: b.scale, seed: b.seed },
        )
    });
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Artifact formats

/// Training metrics as CSV. `wall_ms` is zero unless the run recorded wall
/// time.
pub fn metrics_to_csv(metrics: &[EpisodeMetric]) -> String {
    let mut out = String::from("episode,reward,steps,wall_ms\n");
    for m in metrics {
        out.push_str(&format!("{},{},{},{}\n", m.episode, m.reward, m.steps, m.wall_ms));
    }
    out
}

/// Sweep results as CSV. The target field is quoted because addresses
/// contain a comma.
pub fn sweep_rows_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("target,scale,seed,services,high,medium,low,goal_completed\n");
    for r in rows {
        out.push_str(&format!(
            "\"{}\",{},{},{},{},{},{},{}\n",
            r.target, r.scale, r.seed, r.services, r.high, r.medium, r.low, r.goal_completed
        ));
    }
    out
}

fn pretty_json<T: Serialize>(value: &T) -> Result<String, HarnessError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

/// Writes `checkpoint.json`, `goal_set.json` and `metrics.csv` into `dir`.
pub fn write_train_artifacts(dir: &Path, outcome: &TrainOutcome) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("checkpoint.json"), pretty_json(&outcome.agent)?)?;
    std::fs::write(dir.join("goal_set.json"), pretty_json(&outcome.goal_set)?)?;
    std::fs::write(dir.join("metrics.csv"), metrics_to_csv(&outcome.metrics))?;
    Ok(())
}

/// Writes `evaluation.json` and the step trace `trace.jsonl` into `dir`.
pub fn write_evaluation(dir: &Path, path: &SdrPath) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("evaluation.json"), pretty_json(path)?)?;
    let mut jsonl = Env::trace_to_jsonl(&path.trace);
    if !jsonl.is_empty() {
        jsonl.push('\n');
    }
    std::fs::write(dir.join("trace.jsonl"), jsonl)?;
    Ok(())
}

pub fn load_agent(path: &Path) -> Result<AnyAgent, HarnessError> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

pub fn load_goal_set(path: &Path) -> Result<GoalSet, HarnessError> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

pub fn load_evaluation(path: &Path) -> Result<SdrPath, HarnessError> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Output directory resolution: explicit flag, then `SDRLAB_OUT`, then
/// `./out`.
pub fn resolve_out_dir(flag: Option<PathBuf>, env_var: Option<String>) -> PathBuf {
    flag.or(env_var.map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// Graphviz rendering of the network with one cluster per subnet. Node
/// fill encodes the route's view of each host: the foothold is purple, the
/// study target yellow, compromised hosts orange, discovered-but-untouched
/// hosts green and everything else red. Empty subnets render as a point so
/// their links stay visible.
pub fn render_dot(net: &NetworkConfig, route: &SdrPath, initial: HostAddress) -> String {
    let color = |address: HostAddress| -> &'static str {
        if address == initial {
            "purple"
        } else if address == route.target {
            "yellow"
        } else if route.compromised.contains(&address) {
            "orange"
        } else if route.discovered.contains(&address) {
            "green"
        } else {
            "red"
        }
    };
    let mut out = String::from("digraph sdr {\n");
    out.push_str("  compound=true;\n  rankdir=LR;\n");
    out.push_str("  node [shape=box, style=filled, fontname=\"monospace\"];\n");
    let mut anchors: Vec<String> = Vec::with_capacity(net.subnets.len());
    for (subnet, &size) in net.subnets.iter().enumerate() {
        out.push_str(&format!(
            "  subgraph cluster_{subnet} {{\n    label=\"subnet {subnet}\";\n"
        ));
        if size == 0 {
            out.push_str(&format!(
                "    s{subnet} [shape=point, label=\"\", style=solid];\n"
            ));
            anchors.push(format!("s{subnet}"));
        } else {
            for (i, host) in net.hosts_in_subnet(subnet).enumerate() {
                let address = host.address;
                let id = format!("n{}_{}", address.subnet(), address.host());
                out.push_str(&format!(
                    "    {id} [label=\"{address}\", fillcolor={}];\n",
                    color(address)
                ));
                if i == 0 {
                    anchors.push(id.clone());
                }
            }
        }
        out.push_str("  }\n");
    }
    for &(a, b) in &net.adjacency {
        out.push_str(&format!(
            "  {} -> {} [ltail=cluster_{a}, lhead=cluster_{b}, dir=none];\n",
            anchors[a], anchors[b]
        ));
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ActionKind;

    fn tiny_net_json() -> &'static str {
        r#"{
            "subnets": [1, 2],
            "hosts": [
                {"address": [0, 0], "services": ["ssh"], "os": "linux", "processes": ["cron"]},
                {"address": [1, 0], "services": ["http", "ssh"], "os": "linux"},
                {"address": [1, 1], "services": ["http", "smb-share"], "os": "windows"}
            ],
            "firewalls": [],
            "adjacency": [[0, 1]],
            "service_catalog": {"ssh": "common", "http": "common", "smb-share": "data"}
        }"#
    }

    fn tiny_run_config(dir: &Path) -> RunConfig {
        let net_path = dir.join("net.json");
        std::fs::write(&net_path, tiny_net_json()).unwrap();
        let mut cfg = RunConfig::new(Algorithm::DaA2c, HostAddress(1, 1));
        cfg.network = NetworkSource(net_path.to_string_lossy().into_owned());
        cfg.initial = Some(HostAddress(0, 0));
        cfg.mdp.step_limit = 200;
        cfg.algo.episodes = 4;
        cfg.warmup.episodes = 2;
        cfg
    }

    #[test]
    fn run_config_minimal_document() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"algorithm": "da-ppo", "target": [3, 1]}"#).unwrap();
        assert!(cfg.network.is_reference());
        assert_eq!(cfg.target.unwrap(), HostAddress(3, 1));
        assert_eq!(cfg.initial_host().unwrap(), reference::INITIAL_HOST);
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.mdp.step_limit, 3000);
        assert_eq!(cfg.mdp.goal_reward, 100.0);
        assert_eq!(cfg.warmup.episodes, 100);
        assert_eq!(cfg.mask_mode, MaskMode::Progressive);
        assert!(!cfg.record_wall_time);
        let mdp = cfg.mdp_config().unwrap();
        assert_eq!(mdp.target_host, HostAddress(3, 1));
        assert_eq!(f64::from(mdp.penalty_scale), 1.0);
    }

    #[test]
    fn missing_target_is_a_config_error() {
        let cfg: RunConfig = serde_json::from_str(r#"{"algorithm": "a2c"}"#).unwrap();
        assert!(matches!(cfg.target(), Err(HarnessError::Config(_))));
    }

    #[test]
    fn file_network_requires_initial_host() {
        let cfg: RunConfig = serde_json::from_str(
            r#"{"algorithm": "a2c", "target": [1, 1], "network": "/nonexistent.json"}"#,
        )
        .unwrap();
        assert!(matches!(cfg.initial_host(), Err(HarnessError::Config(_))));
    }

    #[test]
    fn metrics_csv_golden() {
        let metrics = vec![
            EpisodeMetric { episode: 0, reward: -12.5, steps: 40, wall_ms: 0 },
            EpisodeMetric { episode: 1, reward: 88.0, steps: 17, wall_ms: 0 },
        ];
        assert_eq!(
            metrics_to_csv(&metrics),
            "episode,reward,steps,wall_ms\n0,-12.5,40,0\n1,88,17,0\n"
        );
    }

    #[test]
    fn sweep_csv_golden() {
        let rows = vec![SweepRow {
            target: HostAddress(3, 1),
            scale: 11.0,
            seed: 2,
            services: 41,
            high: 1,
            medium: 0,
            low: 3,
            goal_completed: "true".into(),
        }];
        assert_eq!(
            sweep_rows_to_csv(&rows),
            "target,scale,seed,services,high,medium,low,goal_completed\n\"(3,1)\",11,2,41,1,0,3,true\n"
        );
    }

    #[test]
    fn moving_average_short_windows() {
        let ma = moving_average(&[2.0, 4.0, 6.0, 8.0], 3);
        assert_eq!(ma, vec![2.0, 3.0, 4.0, 6.0]);
    }

    #[test]
    fn convergence_on_constant_series_is_immediate() {
        let stats = convergence_stats(&[5.0; 40], 10, 20, 0.05);
        assert_eq!(stats.plateau_episode, Some(0));
        assert_eq!(stats.final_mean, 5.0);
    }

    #[test]
    fn convergence_after_a_ramp() {
        // 30 episodes at 0, then 70 at 100: the window-5 moving average
        // re-enters the 5% band a few episodes into the flat segment.
        let mut rewards = vec![0.0; 30];
        rewards.extend(vec![100.0; 70]);
        let stats = convergence_stats(&rewards, 5, 20, 0.05);
        assert_eq!(stats.final_mean, 100.0);
        // Independent check: scan all suffixes with a naive oracle.
        let ma = moving_average(&rewards, 5);
        let expected = (0..rewards.len())
            .find(|&e| ma[e..].iter().all(|&v| (v - 100.0).abs() <= 5.0))
            .unwrap();
        assert_eq!(stats.plateau_episode, Some(expected));
        // The plateau cannot start before the ramp ends.
        assert!(expected >= 30);
    }

    #[test]
    fn convergence_never_reached_when_tail_keeps_moving() {
        let rewards: Vec<f64> = (0..50).map(|i| i as f64 * 10.0).collect();
        let stats = convergence_stats(&rewards, 3, 10, 0.01);
        assert_eq!(stats.plateau_episode, None);
    }

    #[test]
    fn train_is_deterministic_and_writes_stable_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_run_config(dir.path());

        let a = train(&cfg).unwrap();
        let b = train(&cfg).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.goal_set, b.goal_set);
        assert_eq!(a.agent.param_fingerprint(), b.agent.param_fingerprint());
        assert_eq!(a.metrics.len(), 4);
        assert!(a.metrics.iter().all(|m| m.wall_ms == 0));
        assert!(a.goal_set.contains(HostAddress(1, 1)));

        let out_a = dir.path().join("a");
        let out_b = dir.path().join("b");
        write_train_artifacts(&out_a, &a).unwrap();
        write_train_artifacts(&out_b, &b).unwrap();
        for name in ["checkpoint.json", "goal_set.json", "metrics.csv"] {
            let bytes_a = std::fs::read(out_a.join(name)).unwrap();
            let bytes_b = std::fs::read(out_b.join(name)).unwrap();
            assert_eq!(bytes_a, bytes_b, "{name} differs across identical runs");
        }

        let agent = load_agent(&out_a.join("checkpoint.json")).unwrap();
        assert_eq!(agent.param_fingerprint(), a.agent.param_fingerprint());
        let goals = load_goal_set(&out_a.join("goal_set.json")).unwrap();
        assert_eq!(goals, a.goal_set);
    }

    #[test]
    fn evaluate_produces_a_consistent_summary() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_run_config(dir.path());
        let outcome = train(&cfg).unwrap();
        let net = Arc::new(cfg.network.load().unwrap());
        let env = cfg.build_env(net, outcome.goal_set.clone()).unwrap();
        let path = evaluate(&env, &outcome.agent).unwrap();

        assert_eq!(path.target, HostAddress(1, 1));
        assert_eq!(path.steps, path.trace.len());
        let replayed: f64 = path.trace.iter().map(|t| t.reward.total).sum();
        assert!((replayed - path.total_reward).abs() < 1e-9);
        assert!(path.compromised.contains(&HostAddress(0, 0)));
        assert_eq!(path.goal_count, outcome.goal_set.len());
        assert_eq!(path.completed, path.goals_completed == path.goal_count);
        // Exposure counters cover every compromised host except the foothold.
        assert_eq!(
            path.high_exposure + path.medium_exposure + path.low_exposure,
            path.compromised.len() - 1
        );

        let out = dir.path().join("eval");
        write_evaluation(&out, &path).unwrap();
        let back = load_evaluation(&out.join("evaluation.json")).unwrap();
        assert_eq!(back, path);
        let jsonl = std::fs::read_to_string(out.join("trace.jsonl")).unwrap();
        assert_eq!(jsonl.lines().count(), path.trace.len());
    }

    #[test]
    fn sweep_cells_are_sorted_and_deduplicated() {
        let cfg = SweepConfig {
            run: RunConfig::new(Algorithm::DaA2c, HostAddress(1, 1)),
            targets: vec![HostAddress(9, 2), HostAddress(3, 1)],
            scales: vec![5.0, 1.0],
            seeds: vec![1, 0],
            extra_cells: vec![
                SweepCell { target: HostAddress(3, 1), scale: 1.0, seed: 0 },
                SweepCell { target: HostAddress(8, 2), scale: 15.0, seed: 0 },
            ],
        };
        let cells = cfg.cells();
        assert_eq!(cells.len(), 2 * 2 * 2 + 1);
        let mut sorted = cells.clone();
        sorted.sort_by(cell_order);
        assert_eq!(cells, sorted);
        assert_eq!(cells[0], SweepCell { target: HostAddress(3, 1), scale: 1.0, seed: 0 });
        assert_eq!(cells.last().unwrap().target, HostAddress(9, 2));
    }

    #[test]
    fn sweep_runs_cells_and_reports_rows_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let mut run = tiny_run_config(dir.path());
        run.target = None;
        run.algo.episodes = 2;
        let cfg = SweepConfig {
            run,
            targets: vec![HostAddress(1, 1)],
            scales: vec![1.0, 3.0],
            seeds: vec![0],
            extra_cells: vec![],
        };
        let rows = run_sweep(&cfg).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].scale, 1.0);
        assert_eq!(rows[1].scale, 3.0);
        assert!(rows.iter().all(|r| r.goal_completed != "error"));
        let again = run_sweep(&cfg).unwrap();
        assert_eq!(rows, again);
        let csv = sweep_rows_to_csv(&rows);
        assert!(csv.starts_with("target,scale,seed,services,high,medium,low,goal_completed\n"));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn failing_cells_become_error_rows() {
        let dir = tempfile::tempdir().unwrap();
        let mut run = tiny_run_config(dir.path());
        run.target = None;
        let cfg = SweepConfig {
            run,
            // (5,5) does not exist, so the cell errors out.
            targets: vec![HostAddress(5, 5)],
            scales: vec![1.0],
            seeds: vec![0],
            extra_cells: vec![],
        };
        let rows = run_sweep(&cfg).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].goal_completed, "error");
        assert_eq!(rows[0].services, 0);
    }

    #[test]
    fn out_dir_resolution_order() {
        assert_eq!(
            resolve_out_dir(Some(PathBuf::from("x")), Some("y".into())),
            PathBuf::from("x")
        );
        assert_eq!(resolve_out_dir(None, Some("y".into())), PathBuf::from("y"));
        assert_eq!(resolve_out_dir(None, None), PathBuf::from("out"));
    }

    /// Warmup must not move parameters: the goal set is produced by a frozen
    /// policy.
    #[test]
    fn warmup_leaves_agent_untouched() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_run_config(dir.path());
        let net = Arc::new(cfg.network.load().unwrap());
        let mdp = cfg.mdp_config().unwrap();
        let warm_env = Env::new(
            net,
            mdp.clone(),
            GoalSet::single_target(mdp.target_host, mdp.goal_reward),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let agent = AnyAgent::new(
            cfg.algorithm,
            &warm_env,
            cfg.algo.clone(),
            cfg.mask_mode,
            &mut rng,
        )
        .unwrap();
        let before = agent.param_fingerprint();
        let mut rng_w = ChaCha8Rng::seed_from_u64(10);
        let goals = run_warmup(&warm_env, &cfg.warmup, &agent, &mut rng_w).unwrap();
        assert_eq!(agent.param_fingerprint(), before);
        assert!(goals.target().is_some());
    }

    #[test]
    fn dot_export_clusters_and_colors() {
        let net = parse_network_config(tiny_net_json()).unwrap();
        let route = SdrPath {
            target: HostAddress(1, 1),
            total_reward: 0.0,
            steps: 0,
            services_enumerated: 0,
            high_exposure: 0,
            medium_exposure: 0,
            low_exposure: 0,
            goals_completed: 0,
            goal_count: 1,
            completed: false,
            compromised: vec![HostAddress(0, 0)],
            discovered: vec![HostAddress(0, 0), HostAddress(1, 0)],
            trace: vec![],
        };
        let dot = render_dot(&net, &route, HostAddress(0, 0));
        assert!(dot.contains("subgraph cluster_0"));
        assert!(dot.contains("subgraph cluster_1"));
        assert!(dot.contains("n0_0 [label=\"(0,0)\", fillcolor=purple]"));
        assert!(dot.contains("n1_0 [label=\"(1,0)\", fillcolor=green]"));
        assert!(dot.contains("n1_1 [label=\"(1,1)\", fillcolor=yellow]"));
        assert!(dot.contains("ltail=cluster_0, lhead=cluster_1"));
        assert!(dot.ends_with("}\n"));
    }

    #[test]
    fn trace_round_trips_through_jsonl() {
        let record = TraceRecord::new(
            0,
            crate::env::Action {
                target: HostAddress(1, 0),
                kind: ActionKind::ServiceScan,
            },
            crate::env::RewardBreakdown { discovery: 2.0, goal: 0.0, penalty: -1.0 },
            false,
        );
        let text = Env::trace_to_jsonl(&[record.clone()]);
        let back: TraceRecord = serde_json::from_str(&text).unwrap();
        assert_eq!(back.reward.total, 1.0);
        assert_eq!(back.action.kind, ActionKind::ServiceScan);
    }
}
