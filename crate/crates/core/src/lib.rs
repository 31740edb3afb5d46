//! Desk-scale attack-graph simulator and reinforcement-learning engine for
//! planning surveillance detection routes (SDRs) through segmented networks.
//!
//! The crate is organised bottom-up:
//!
//! * [`net`] - network topology documents, validation and reachability
//! * [`terrain`] - service categories, risk tiers and detection penalties
//! * [`env`] - the episodic MDP built from a network and a goal set
//! * [`nn`] - small dense networks with exact gradients and Adam
//! * [`algos`] - GAE, A2C / PPO losses and the single- and double-agent policies
//! * [`warmup`] - goal-growing exploration phase that seeds the goal set
//! * [`harness`] - train / evaluate / sweep drivers and convergence reporting
//! * [`cli`] - the `sdrlab` command line front end

pub mod algos;
pub mod cli;
pub mod env;
pub mod harness;
pub mod net;
pub mod nn;
pub mod terrain;
pub mod warmup;

pub use algos::{AlgoParams, Algorithm, AnyAgent, Policy};
pub use env::{Action, ActionKind, Env, EnvState, MaskMode, Observation, RewardBreakdown};
pub use harness::{evaluate, train, RunConfig, SdrPath, SweepConfig};
pub use net::{HostAddress, HostSpec, NetworkConfig};
pub use terrain::{PenaltyScale, RiskTier, ServiceCategory};
pub use warmup::{GoalNode, GoalOrigin, GoalSet};
