//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 when a run fails at runtime, 2 for usage or
//! configuration problems. The output directory comes from `--out`, then
//! the `SDRLAB_OUT` environment variable, then `./out`.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::harness::{
    self, evaluate, load_run_config, load_sweep_config, render_dot, resolve_out_dir,
    run_sweep_with, sweep_rows_to_csv, train_with, HarnessError,
};

#[derive(Debug, Parser)]
#[command(
    name = "sdrlab",
    version,
    about = "Attack-graph simulator and trainer for surveillance detection routes"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Warm up and train an agent; writes checkpoint.json, goal_set.json,
    /// metrics.csv and run_config.json to the output directory.
    Train(CommonArgs),
    /// Greedy-evaluate a trained checkpoint; writes evaluation.json and
    /// trace.jsonl.
    Evaluate(CommonArgs),
    /// Train and evaluate every cell of a sensitivity sweep; writes
    /// sweep.csv.
    Sweep(CommonArgs),
    /// Render the network and an evaluated route as Graphviz DOT; writes
    /// route.dot.
    Export(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// JSON configuration file for the run.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to $SDRLAB_OUT, then ./out.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the seed from the configuration file.
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress progress and summary output.
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<HarnessError> for CliError {
    fn from(err: HarnessError) -> CliError {
        match err {
            HarnessError::Config(msg) => CliError::Usage(msg),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

/// Parses and executes `args`, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            // clap already formats help/version (exit 0) vs usage errors
            // (exit 2).
            let _ = err.print();
            return err.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

fn out_dir(args: &CommonArgs) -> PathBuf {
    resolve_out_dir(args.out.clone(), std::env::var("SDRLAB_OUT").ok())
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(args) => train_cmd(args),
        Command::Evaluate(args) => evaluate_cmd(args),
        Command::Sweep(args) => sweep_cmd(args),
        Command::Export(args) => export_cmd(args),
    }
}

fn load_cfg(args: &CommonArgs) -> Result<harness::RunConfig, CliError> {
    let mut cfg = load_run_config(&args.config)
        .map_err(|e| CliError::Usage(format!("cannot load config {}: {e}", args.config.display())))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn train_cmd(args: CommonArgs) -> Result<(), CliError> {
    let cfg = load_cfg(&args)?;
    let dir = out_dir(&args);
    let episodes = cfg.algo.episodes;
    let quiet = args.quiet;
    let outcome = train_with(&cfg, |m| {
        if !quiet && ((m.episode + 1) % 100 == 0 || m.episode + 1 == episodes) {
            eprintln!(
                "[train] episode {}/{} reward {:.2} steps {}",
                m.episode + 1,
                episodes,
                m.reward,
                m.steps
            );
        }
    })?;
    harness::write_train_artifacts(&dir, &outcome).map_err(CliError::from)?;
    let echo = serde_json::to_string_pretty(&cfg)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    std::fs::write(dir.join("run_config.json"), echo + "\n")
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    if !quiet {
        println!(
            "trained {} for {} episodes; goal set has {} nodes ({} dynamic); artifacts in {}",
            cfg.algorithm,
            outcome.metrics.len(),
            outcome.goal_set.len(),
            outcome.goal_set.dynamic_count(),
            dir.display()
        );
    }
    Ok(())
}

fn evaluate_cmd(args: CommonArgs) -> Result<(), CliError> {
    let cfg = load_cfg(&args)?;
    let dir = out_dir(&args);
    let agent = harness::load_agent(&dir.join("checkpoint.json")).map_err(|e| {
        CliError::Runtime(format!("cannot load checkpoint from {}: {e}", dir.display()))
    })?;
    let goals = harness::load_goal_set(&dir.join("goal_set.json")).map_err(|e| {
        CliError::Runtime(format!("cannot load goal set from {}: {e}", dir.display()))
    })?;
    let net = std::sync::Arc::new(cfg.network.load()?);
    let env = cfg.build_env(net, goals)?;
    let path = evaluate(&env, &agent)?;
    harness::write_evaluation(&dir, &path)?;
    if !args.quiet {
        println!(
            "target {}: completed={} steps={} reward={:.2} exposure H/M/L={}/{}/{} services={}",
            path.target,
            path.completed,
            path.steps,
            path.total_reward,
            path.high_exposure,
            path.medium_exposure,
            path.low_exposure,
            path.services_enumerated
        );
    }
    Ok(())
}

fn sweep_cmd(args: CommonArgs) -> Result<(), CliError> {
    let mut cfg = load_sweep_config(&args.config)
        .map_err(|e| CliError::Usage(format!("cannot load config {}: {e}", args.config.display())))?;
    if let Some(seed) = args.seed {
        cfg.run.seed = seed;
    }
    let dir = out_dir(&args);
    let quiet = args.quiet;
    let rows = run_sweep_with(&cfg, |row| {
        if !quiet {
            eprintln!(
                "[sweep] target {} scale {} seed {}: goal_completed={}",
                row.target, row.scale, row.seed, row.goal_completed
            );
        }
    })?;
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Runtime(e.to_string()))?;
    std::fs::write(dir.join("sweep.csv"), sweep_rows_to_csv(&rows))
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    if !quiet {
        println!("swept {} cells; results in {}", rows.len(), dir.join("sweep.csv").display());
    }
    Ok(())
}

fn export_cmd(args: CommonArgs) -> Result<(), CliError> {
    let cfg = load_cfg(&args)?;
    let dir = out_dir(&args);
    let route = harness::load_evaluation(&dir.join("evaluation.json")).map_err(|e| {
        CliError::Runtime(format!(
            "cannot load evaluation from {}: {e}; run `sdrlab evaluate` first",
            dir.display()
        ))
    })?;
    let net = cfg.network.load()?;
    let dot = render_dot(&net, &route, cfg.initial_host()?);
    std::fs::write(dir.join("route.dot"), dot).map_err(|e| CliError::Runtime(e.to_string()))?;
    if !args.quiet {
        println!("wrote {}", dir.join("route.dot").display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_subcommands_and_flags() {
        let cli = Cli::try_parse_from([
            "sdrlab", "train", "--config", "cfg.json", "--out", "runs", "--seed", "7", "--quiet",
        ])
        .unwrap();
        match cli.command {
            Command::Train(args) => {
                assert_eq!(args.config, PathBuf::from("cfg.json"));
                assert_eq!(args.out, Some(PathBuf::from("runs")));
                assert_eq!(args.seed, Some(7));
                assert!(args.quiet);
            }
            other => panic!("unexpected command {other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_subcommand() {
        let err = Cli::try_parse_from(["sdrlab", "frobnicate"]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn missing_config_flag_is_usage() {
        let err = Cli::try_parse_from(["sdrlab", "train"]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn run_reports_usage_for_bad_config_path() {
        let code = run(["sdrlab", "train", "--config", "/definitely/not/here.json", "--quiet"]);
        assert_eq!(code, 2);
    }

    #[test]
    fn help_and_version_are_success_exits() {
        let help = Cli::try_parse_from(["sdrlab", "--help"]).unwrap_err();
        assert_eq!(help.exit_code(), 0);
        let version = Cli::try_parse_from(["sdrlab", "--version"]).unwrap_err();
        assert_eq!(version.exit_code(), 0);
    }
}
