//! The `oracle` subcommand: exact target density, mode list and flows.

use std::fs;
use std::path::Path;

use anyhow::Context;
use egfn_core::config::{AnyEnv, RunConfig};
use egfn_core::oracle::{exact_edge_flows, true_density};
use egfn_core::Environment;

pub const DENSITY_FILE: &str = "density.csv";
pub const MODES_FILE: &str = "modes.csv";
pub const FLOWS_FILE: &str = "flows.csv";
pub const STATE_FLOWS_FILE: &str = "state_flows.csv";

pub fn dump_to_dir(cfg: &RunConfig, dir: &Path, cap: u128) -> anyhow::Result<()> {
    match cfg.build_env()? {
        AnyEnv::Grid(env) => dump_env(&env, dir, cap),
        AnyEnv::Seq(env) => dump_env(&env, dir, cap),
    }
}

/// Tables are computed first so a cap failure leaves no partial output.
pub fn dump_env<E: Environment>(env: &E, dir: &Path, cap: u128) -> anyhow::Result<()> {
    let density = true_density(env, cap)?;
    let terminals = env.enumerate_terminals(cap)?;
    let flows = exact_edge_flows(env, cap)?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;

    let mut w = csv::Writer::from_path(dir.join(DENSITY_FILE))?;
    w.write_record(["terminal", "reward", "probability"])?;
    for x in &terminals {
        w.write_record([
            env.describe(x),
            env.reward(x)?.to_string(),
            density.probs[env.terminal_index(x)].to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join(MODES_FILE))?;
    w.write_record(["terminal", "reward", "region"])?;
    for x in env.mode_set(cap)? {
        let region = env.mode_region(&x).map(|r| r.to_string()).unwrap_or_default();
        w.write_record([env.describe(&x), env.reward(&x)?.to_string(), region])?;
    }
    w.flush()?;

    let mut edges = csv::Writer::from_path(dir.join(FLOWS_FILE))?;
    edges.write_record(["state", "action", "child", "child_terminal", "flow"])?;
    let mut nodes = csv::Writer::from_path(dir.join(STATE_FLOWS_FILE))?;
    nodes.write_record(["state", "terminal", "flow"])?;
    for s in &flows.states {
        let terminal = env.is_terminal(s);
        let f = flows.state(s).unwrap_or(0.0);
        nodes.write_record([env.describe(s), terminal.to_string(), f.to_string()])?;
        if terminal {
            continue;
        }
        let mask = env.allowed_actions(s)?;
        for (a, _) in mask.iter().enumerate().filter(|(_, &ok)| ok) {
            let child = env.step(s, a)?;
            edges.write_record([
                env.describe(s),
                a.to_string(),
                env.describe(&child),
                env.is_terminal(&child).to_string(),
                flows.edge(s, a).unwrap_or(0.0).to_string(),
            ])?;
        }
    }
    edges.flush()?;
    nodes.flush()?;
    Ok(())
}
