//! Command-line front end: `train`, `sweep` and `oracle`.
//!
//! Every subcommand reads one JSON run config (see [`egfn_core::config`])
//! plus optional `key=value` overrides, and writes its artifacts into a run
//! directory. Failures map to fixed process exit codes via [`exit_code`].

pub mod artifacts;
pub mod oracle_dump;
pub mod sweep;
pub mod train;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use egfn_core::config::{parse_override, RunConfig};
use egfn_core::Error;

/// Environment variable naming the directory that relative run directories
/// are resolved against.
pub const OUTPUT_ROOT_VAR: &str = "EGFN_OUTPUT_ROOT";

pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const NON_FINITE: i32 = 3;
    pub const ORACLE_CAP: i32 = 4;
}

#[derive(Debug, Parser)]
#[command(name = "egfn", version, about = "Evolution-guided GFlowNet training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one run and write its artifacts.
    Train(TrainArgs),
    /// Train every cell of a parameter grid for several seeds and aggregate.
    Sweep(SweepArgs),
    /// Dump the exact target density, mode list and flows.
    Oracle(OracleArgs),
}

#[derive(Debug, Args, Clone)]
pub struct ConfigArgs {
    /// Path of the JSON run config.
    #[arg(long, short)]
    pub config: PathBuf,
    /// Dotted-key override, e.g. `evo.disabled=true`. Repeatable.
    #[arg(long = "override", short = 'o', value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory, used as given. Defaults to `output.dir` or a name
    /// derived from the config, under the output root.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Threads used to evaluate the population.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    /// Grid axis `key=v1,v2,...`. Repeatable; cells are the cartesian product.
    #[arg(long = "grid", value_name = "KEY=V1,V2")]
    pub grid: Vec<String>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub seeds: Vec<u64>,
    /// Runs executed concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    /// Largest number of states the oracle may enumerate.
    #[arg(long, default_value_t = egfn_core::envs::DEFAULT_ENUMERATION_CAP)]
    pub cap: u128,
}

/// Maps an error chain to the documented process exit code.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Config(_) | Error::Parse { .. } | Error::MissingReward(_) | Error::Data(_) => exit::CONFIG,
                Error::NonFiniteLoss { .. } | Error::NonFiniteGradient { .. } => exit::NON_FINITE,
                Error::OracleUnavailable { .. } => exit::ORACLE_CAP,
                _ => exit::FAILURE,
            };
        }
        if cause.downcast_ref::<sweep::SweepFailed>().is_some() {
            return exit::FAILURE;
        }
    }
    exit::FAILURE
}

/// `EGFN_OUTPUT_ROOT`, or `runs` in the working directory.
pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

pub fn parse_overrides(raw: &[String]) -> anyhow::Result<Vec<(String, String)>> {
    Ok(raw.iter().map(|s| parse_override(s)).collect::<Result<_, _>>()?)
}

/// Picks the run directory: `--out` verbatim, else `output.dir` or
/// `<config stem>-seed<seed>` joined to the output root.
pub fn resolve_out_dir(explicit: Option<&Path>, cfg: &RunConfig, config_path: &Path) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    let rel = cfg.output.dir.clone().unwrap_or_else(|| {
        let stem = config_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into());
        PathBuf::from(format!("{stem}-seed{}", cfg.seed))
    });
    if rel.is_absolute() {
        rel
    } else {
        output_root().join(rel)
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train(args) => {
            let mut overrides = parse_overrides(&args.common.overrides)?;
            if let Some(seed) = args.seed {
                overrides.push(("seed".into(), seed.to_string()));
            }
            if let Some(w) = args.workers {
                overrides.push(("train.workers".into(), w.to_string()));
            }
            let cfg = RunConfig::load(&args.common.config, &overrides)?;
            let dir = resolve_out_dir(args.common.out.as_deref(), &cfg, &args.common.config);
            let summary = train::train_to_dir(&cfg, &dir)?;
            log::info!(
                "{} steps, {} mode cells, exact l1 {:?}; artifacts in {}",
                summary.steps,
                summary.modes_cells,
                summary.l1_exact,
                dir.display()
            );
            Ok(())
        }
        Command::Sweep(args) => sweep::run_sweep(&args),
        Command::Oracle(args) => {
            let overrides = parse_overrides(&args.common.overrides)?;
            let cfg = RunConfig::load(&args.common.config, &overrides)?;
            let dir = resolve_out_dir(args.common.out.as_deref(), &cfg, &args.common.config);
            oracle_dump::dump_to_dir(&cfg, &dir, args.cap)?;
            log::info!("oracle tables written to {}", dir.display());
            Ok(())
        }
    }
}
