//! The `train` subcommand.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use anyhow::Context;
use egfn_core::config::{AnyEnv, RunConfig};
use egfn_core::trainer::RunSummary;
use egfn_core::{Environment, Error, Trainer};
use serde_json::json;

use crate::artifacts::{
    write_length_histograms, write_metrics, write_params_file, LENGTH_HIST_FILE, METRICS_FILE, NAN_DUMP_FILE,
    PARAMS_FILE, SNAPSHOT_FILE, SUMMARY_FILE,
};

/// Trains the configured run and writes every artifact into `dir`.
///
/// On a non-finite loss the metrics recorded so far and `nan_dump.txt` are
/// written before the error is returned.
pub fn train_to_dir(cfg: &RunConfig, dir: &Path) -> anyhow::Result<RunSummary> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    match cfg.build_env()? {
        AnyEnv::Grid(env) => train_env(env, cfg, dir),
        AnyEnv::Seq(env) => train_env(env, cfg, dir),
    }
}

fn train_env<E: Environment>(env: E, cfg: &RunConfig, dir: &Path) -> anyhow::Result<RunSummary> {
    let mut trainer = Trainer::new(
        env,
        cfg.objective,
        cfg.train.clone(),
        cfg.evo.clone(),
        cfg.replay.clone(),
        cfg.seed,
        cfg.output.trainer_options(),
    )?;
    if let Err(e) = trainer.run() {
        write_metrics(&dir.join(METRICS_FILE), &trainer.record().rows)?;
        if let Error::NonFiniteLoss { step, dump } = &e {
            fs::write(dir.join(NAN_DUMP_FILE), format!("non-finite loss at step {step}\n{dump}"))?;
        }
        return Err(e.into());
    }

    let record = trainer.record();
    write_metrics(&dir.join(METRICS_FILE), &record.rows)?;
    write_length_histograms(&dir.join(LENGTH_HIST_FILE), &record.length_histograms)?;
    if cfg.output.buffer_snapshot {
        let f = fs::File::create(dir.join(SNAPSHOT_FILE))?;
        trainer.buffer().write_snapshot(BufWriter::new(f))?;
    }
    write_params_file(&dir.join(PARAMS_FILE), trainer.star())?;

    let summary = trainer.summary()?;
    let doc = json!({
        "metrics_schema": egfn_core::MetricsRow::HEADER.join(","),
        "config": cfg.resolved().to_json(),
        "summary": summary,
    });
    fs::write(dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&doc)? + "\n")?;
    Ok(summary)
}
