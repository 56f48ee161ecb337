use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use prune_cli::commands;
use prune_cli::config::{NoiseChoice, RunConfig, TimingChoice, Toggle};

/// Pruning-robot simulator harness.
///
/// Log verbosity follows `PRUNE_LOG` (error, warn, info, debug, trace).
#[derive(Parser)]
#[command(name = "prune-sim", version)]
struct Cli {
    /// TOML run configuration; defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    /// Number of consecutive seeds starting at `--seed`.
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write generated worlds as JSON.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Run full locations and write per-seed logs and reports.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        noise: Option<NoiseChoice>,
        #[arg(long, value_enum)]
        timing: Option<TimingChoice>,
        #[arg(long, value_enum)]
        intervene: Option<Toggle>,
        /// Use this world file for every seed instead of generating one.
        #[arg(long)]
        world: Option<PathBuf>,
    },
    /// Recompute a report from a log and check it against the stored one.
    Replay {
        log: PathBuf,
        /// Stored report; defaults to `report.json` next to the log.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Also rerun the mission from the config and compare log bytes.
        #[arg(long)]
        rerun: bool,
    },
    /// Aggregate logs (files or directories) into summary lines and CSV.
    Report {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// SVG snapshots of a world and of selected scan views.
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        world: Option<PathBuf>,
        /// Scan waypoint to render; repeatable.
        #[arg(long)]
        waypoint: Vec<usize>,
        #[arg(long, value_enum)]
        noise: Option<NoiseChoice>,
    },
}

fn load(cli_config: &Option<PathBuf>, common: Option<&Common>) -> Result<RunConfig> {
    let mut cfg = match cli_config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(c) = common {
        if let Some(s) = c.seed {
            cfg.seed = s;
        }
        if let Some(n) = c.seeds {
            cfg.seeds = n;
        }
        if let Some(o) = &c.out {
            cfg.out = o.clone();
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<Vec<String>> {
    match cli.command {
        Command::Generate { common } => commands::cmd_generate(&load(&cli.config, Some(&common))?),
        Command::Run { common, noise, timing, intervene, world } => {
            let mut cfg = load(&cli.config, Some(&common))?;
            if let Some(n) = noise {
                cfg.apply_noise(n);
            }
            if let Some(t) = timing {
                cfg.apply_timing(t);
            }
            if let Some(i) = intervene {
                cfg.apply_intervention(i);
            }
            commands::cmd_run(&cfg, world.as_deref())
        }
        Command::Replay { log, report, rerun } => {
            let cfg = if rerun { Some(load(&cli.config, None)?) } else { None };
            commands::cmd_replay(&log, report.as_deref(), cfg.as_ref())
        }
        Command::Report { paths, out } => commands::cmd_report(&paths, out.as_deref()),
        Command::Render { common, world, waypoint, noise } => {
            let mut cfg = load(&cli.config, Some(&common))?;
            if let Some(n) = noise {
                cfg.apply_noise(n);
            }
            commands::cmd_render(&cfg, world.as_deref(), &waypoint)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PRUNE_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
