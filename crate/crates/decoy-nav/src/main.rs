//! Thin command-line front end over [`decoy_nav::harness`].

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use decoy_nav::harness::{cmd_eval, cmd_pursue, cmd_sweep, cmd_train, AgentKind, Backend, RunConfig};

#[derive(Parser)]
#[command(name = "decoy-nav", version, about = "Privacy-preserving path planning runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Master seed; fully determines the run together with the config.
    #[arg(long)]
    seed: u64,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Override the configured agent kind.
    #[arg(long)]
    agent: Option<AgentKind>,
    /// Override the configured backend.
    #[arg(long)]
    backend: Option<Backend>,
    /// Override the training budget.
    #[arg(long)]
    episodes: Option<usize>,
    /// Override the pruning constant.
    #[arg(long)]
    delta: Option<f64>,
    /// Override the initial soft-max temperature.
    #[arg(long)]
    tau0: Option<f64>,
    /// Override the per-episode temperature decay.
    #[arg(long)]
    tau_decay: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train or solve the configured agent and write checkpoints.
    Train(Common),
    /// Evaluate a checkpoint against the passive observer.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory from a matching train run.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run random-placement pursuit trials against the pirate.
    Pursue {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Override the number of random placements.
        #[arg(long)]
        placements: Option<usize>,
    },
    /// Train and evaluate across the configured hyperparameter grid.
    Sweep(Common),
}

fn load_config(common: &Common) -> Result<RunConfig, decoy_nav::harness::HarnessError> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(agent) = common.agent {
        cfg.run.agent = agent;
    }
    if let Some(backend) = common.backend {
        cfg.run.backend = backend;
    }
    if let Some(episodes) = common.episodes {
        cfg.run.episodes = episodes;
    }
    if let Some(delta) = common.delta {
        cfg.deam.delta = delta;
    }
    if let Some(tau0) = common.tau0 {
        cfg.deam.tau0 = tau0;
    }
    if let Some(tau_decay) = common.tau_decay {
        cfg.deam.tau_decay = tau_decay;
    }
    Ok(cfg)
}

fn run() -> Result<(), decoy_nav::harness::HarnessError> {
    match Cli::parse().command {
        Command::Train(common) => {
            let cfg = load_config(&common)?;
            let out = cmd_train(&cfg, common.seed, &common.out)?;
            println!(
                "trained {} ({} backend) on {}; checkpoints in {}",
                cfg.run.agent.name(),
                cfg.run.backend.name(),
                out.scenario_id,
                common.out.join("checkpoints").display()
            );
        }
        Command::Eval { common, checkpoint } => {
            let cfg = load_config(&common)?;
            let out = cmd_eval(&cfg, common.seed, &common.out, &checkpoint)?;
            for row in &out.rows {
                println!(
                    "{} ep seed {}: p_real {:.4}, cost ratio {}, steps after ldp {}, reached {}",
                    row.agent,
                    row.seed,
                    row.mean_real_probability,
                    if row.path_cost_ratio.is_finite() {
                        format!("{:.3}", row.path_cost_ratio)
                    } else {
                        "inf".into()
                    },
                    row.steps_after_ldp,
                    row.reached_real
                );
            }
        }
        Command::Pursue {
            common,
            checkpoint,
            placements,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(n) = placements {
                cfg.run.placements = n;
            }
            let out = cmd_pursue(&cfg, common.seed, &common.out, &checkpoint)?;
            println!(
                "{} pursuit trials: capture rate {:.3}",
                out.rows.len(),
                out.capture_rate
            );
        }
        Command::Sweep(common) => {
            let cfg = load_config(&common)?;
            let rows = cmd_sweep(&cfg, common.seed, &common.out)?;
            for row in &rows {
                println!(
                    "delta {:+.1} tau0 {:.2} decay {:.2} seed {}: p_real {:.4}, cost ratio {}, failures {:.2}",
                    row.delta,
                    row.tau0,
                    row.tau_decay,
                    row.seed,
                    row.mean_real_probability,
                    if row.mean_cost_ratio.is_finite() {
                        format!("{:.3}", row.mean_cost_ratio)
                    } else {
                        "inf".into()
                    },
                    row.failure_rate
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
