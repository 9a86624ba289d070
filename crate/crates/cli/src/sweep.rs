//! The `sweep` subcommand: a cartesian grid of dotted-key overrides, each
//! cell trained once per seed, aggregated into `aggregate.csv`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use egfn_core::config::RunConfig;
use egfn_core::trainer::RunSummary;
use egfn_core::Error;
use log::{error, info};
use rayon::prelude::*;

use crate::{parse_overrides, resolve_out_dir, SweepArgs};

pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const FAILURES_FILE: &str = "failures.txt";

/// Returned when at least one run of a sweep failed.
#[derive(Debug)]
pub struct SweepFailed {
    pub failed: usize,
    pub total: usize,
}

impl std::fmt::Display for SweepFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} of {} sweep runs failed", self.failed, self.total)
    }
}

impl std::error::Error for SweepFailed {}

/// One grid axis: a dotted key and its candidate values (raw JSON text).
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub key: String,
    pub values: Vec<String>,
}

/// Splits on commas that are not inside brackets or quotes, so list values
/// such as `[64,64]` survive.
fn split_top_level(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut quoted = false;
    let mut cur = String::new();
    for c in s.chars() {
        match c {
            '"' => quoted = !quoted,
            '[' | '{' if !quoted => depth += 1,
            ']' | '}' if !quoted => depth -= 1,
            ',' if depth == 0 && !quoted => {
                out.push(std::mem::take(&mut cur).trim().to_string());
                continue;
            }
            _ => {}
        }
        cur.push(c);
    }
    out.push(cur.trim().to_string());
    out
}

pub fn parse_axis(spec: &str) -> egfn_core::Result<Axis> {
    let (key, values) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("grid axis {spec:?} is not key=v1,v2")))?;
    let values = split_top_level(values);
    if key.trim().is_empty() || values.iter().any(String::is_empty) {
        return Err(Error::Config(format!("grid axis {spec:?} has an empty key or value")));
    }
    Ok(Axis {
        key: key.trim().to_string(),
        values,
    })
}

/// Cartesian product in axis order; the last axis varies fastest.
pub fn cells(axes: &[Axis]) -> Vec<Vec<(String, String)>> {
    axes.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.iter()
            .flat_map(|prefix| {
                axis.values.iter().map(move |v| {
                    let mut cell = prefix.clone();
                    cell.push((axis.key.clone(), v.clone()));
                    cell
                })
            })
            .collect()
    })
}

pub fn cell_key(cell: &[(String, String)]) -> String {
    if cell.is_empty() {
        return "base".into();
    }
    cell.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
}

/// Final metrics aggregated over seeds.
const METRICS: [&str; 8] = [
    "final_loss",
    "modes_cells",
    "modes_regions",
    "l1_exact",
    "l1_empirical",
    "top100",
    "reward_calls",
    "states_visited",
];

fn metric(s: &RunSummary, name: &str) -> Option<f64> {
    match name {
        "final_loss" => s.final_loss,
        "modes_cells" => Some(s.modes_cells as f64),
        "modes_regions" => Some(s.modes_regions as f64),
        "l1_exact" => s.l1_exact,
        "l1_empirical" => s.l1_empirical,
        "top100" => s.top100,
        "reward_calls" => Some(s.reward_calls as f64),
        "states_visited" => Some(s.states_visited as f64),
        _ => None,
    }
}

/// Mean and population variance.
pub fn mean_var(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var))
}

/// Outcome of one (cell, seed) run.
#[derive(Debug)]
pub struct RunResult {
    pub cell: usize,
    pub seed: u64,
    pub outcome: Result<RunSummary, String>,
}

/// One aggregate row.
#[derive(Debug, Clone, PartialEq)]
pub struct CellAggregate {
    pub key: String,
    pub seeds: Vec<u64>,
    pub failed: usize,
    /// `(mean, variance)` per entry of the metric list, over successful seeds.
    pub stats: Vec<Option<(f64, f64)>>,
}

pub fn aggregate(keys: &[String], seeds: &[u64], results: &[RunResult]) -> Vec<CellAggregate> {
    let mut rows: Vec<CellAggregate> = keys
        .iter()
        .enumerate()
        .map(|(c, key)| {
            let ok: Vec<&RunSummary> = results
                .iter()
                .filter(|r| r.cell == c)
                .filter_map(|r| r.outcome.as_ref().ok())
                .collect();
            let failed = results.iter().filter(|r| r.cell == c && r.outcome.is_err()).count();
            let stats = METRICS
                .iter()
                .map(|m| {
                    let xs: Vec<f64> = ok.iter().filter_map(|s| metric(s, m)).collect();
                    // A metric that only some seeds report is left out.
                    if xs.len() == ok.len() {
                        mean_var(&xs)
                    } else {
                        None
                    }
                })
                .collect();
            CellAggregate {
                key: key.clone(),
                seeds: seeds.to_vec(),
                failed,
                stats,
            }
        })
        .collect();
    rows.sort_by(|a, b| a.key.cmp(&b.key));
    rows
}

pub fn write_aggregate(path: &Path, rows: &[CellAggregate]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["cell".to_string(), "seeds".into(), "runs_ok".into(), "runs_failed".into()];
    for m in METRICS {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_var"));
    }
    w.write_record(&header)?;
    for row in rows {
        let mut rec = vec![
            row.key.clone(),
            row.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(" "),
            (row.seeds.len() - row.failed).to_string(),
            row.failed.to_string(),
        ];
        for s in &row.stats {
            match s {
                Some((m, v)) => {
                    rec.push(m.to_string());
                    rec.push(v.to_string());
                }
                None => {
                    rec.push(String::new());
                    rec.push(String::new());
                }
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn run_sweep(args: &SweepArgs) -> anyhow::Result<()> {
    if args.seeds.is_empty() {
        bail!(Error::Config("sweep needs at least one seed".into()));
    }
    let base = parse_overrides(&args.common.overrides)?;
    let axes = args.grid.iter().map(|g| parse_axis(g)).collect::<egfn_core::Result<Vec<_>>>()?;
    let grid = cells(&axes);
    let keys: Vec<String> = grid.iter().map(|c| cell_key(c)).collect();

    // Every cell must at least parse before anything runs.
    let mut configs = Vec::with_capacity(grid.len() * args.seeds.len());
    for (c, cell) in grid.iter().enumerate() {
        for &seed in &args.seeds {
            let mut overrides = base.clone();
            overrides.extend(cell.iter().cloned());
            overrides.push(("seed".into(), seed.to_string()));
            let cfg = RunConfig::load(&args.common.config, &overrides)
                .with_context(|| format!("cell {}", keys[c]))?;
            configs.push((c, seed, cfg));
        }
    }
    let probe = RunConfig::load(&args.common.config, &base)?;
    let root = resolve_out_dir(args.common.out.as_deref(), &probe, &args.common.config);
    fs::create_dir_all(&root)?;
    let cells_index: Vec<String> = keys.iter().enumerate().map(|(i, k)| format!("cell{i:03},{k}")).collect();
    fs::write(root.join("cells.txt"), cells_index.join("\n") + "\n")?;

    let run_one = |(c, seed, cfg): &(usize, u64, RunConfig)| -> RunResult {
        let dir: PathBuf = root.join(format!("cell{c:03}")).join(format!("seed{seed}"));
        info!("sweep: {} seed {seed}", keys[*c]);
        let outcome = crate::train::train_to_dir(cfg, &dir).map_err(|e| format!("{e:#}"));
        if let Err(msg) = &outcome {
            error!("sweep: {} seed {seed} failed: {msg}", keys[*c]);
        }
        RunResult {
            cell: *c,
            seed: *seed,
            outcome,
        }
    };
    let results: Vec<RunResult> = if args.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(args.jobs).build()?;
        pool.install(|| configs.par_iter().map(run_one).collect())
    } else {
        configs.iter().map(run_one).collect()
    };

    write_aggregate(&root.join(AGGREGATE_FILE), &aggregate(&keys, &args.seeds, &results))?;
    let failures: Vec<String> = results
        .iter()
        .filter_map(|r| {
            r.outcome
                .as_ref()
                .err()
                .map(|m| format!("{} seed {}: {m}", keys[r.cell], r.seed))
        })
        .collect();
    if failures.is_empty() {
        Ok(())
    } else {
        fs::write(root.join(FAILURES_FILE), failures.join("\n") + "\n")?;
        Err(SweepFailed {
            failed: failures.len(),
            total: results.len(),
        }
        .into())
    }
}
