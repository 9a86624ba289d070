//! On-disk run artifacts.
//!
//! `final_params.bin` layout, all integers and floats little-endian:
//!
//! ```text
//! magic        8 bytes   "EGFNPRM1"
//! layers       u32
//! per layer    u32 input width, u32 output width
//! count        u64       number of f64 values that follow log_z
//! log_z        f64
//! values       count x f64
//! ```
//!
//! Each layer stores `output width` rows of `input width` weights followed
//! by that row's bias, layers in input-to-output order.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use anyhow::{bail, Context};
use egfn_core::trainer::LengthHistogram;
use egfn_core::{GfnAgent, MetricsRow};

pub const PARAMS_MAGIC: &[u8; 8] = b"EGFNPRM1";

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SNAPSHOT_FILE: &str = "buffer_snapshot.txt";
pub const PARAMS_FILE: &str = "final_params.bin";
pub const LENGTH_HIST_FILE: &str = "length_hist.csv";
pub const NAN_DUMP_FILE: &str = "nan_dump.txt";

/// Contents of a `final_params.bin` file.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredParams {
    /// `(input width, output width)` per layer.
    pub layers: Vec<(u32, u32)>,
    pub log_z: f64,
    pub values: Vec<f64>,
}

pub fn write_params<W: Write>(mut out: W, agent: &GfnAgent) -> std::io::Result<()> {
    let layout = agent.params.layout();
    out.write_all(PARAMS_MAGIC)?;
    out.write_all(&(layout.len() as u32).to_le_bytes())?;
    for l in layout {
        out.write_all(&(l.cols as u32).to_le_bytes())?;
        out.write_all(&(l.rows as u32).to_le_bytes())?;
    }
    out.write_all(&(agent.params.len() as u64).to_le_bytes())?;
    out.write_all(&agent.log_z.to_le_bytes())?;
    for v in agent.params.values() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()
}

pub fn read_params<R: Read>(mut input: R) -> anyhow::Result<StoredParams> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).context("reading magic")?;
    if &magic != PARAMS_MAGIC {
        bail!("not a parameter file (magic {magic:?})");
    }
    let mut u32buf = [0u8; 4];
    let mut u64buf = [0u8; 8];
    input.read_exact(&mut u32buf)?;
    let n_layers = u32::from_le_bytes(u32buf);
    let mut layers = Vec::with_capacity(n_layers as usize);
    for _ in 0..n_layers {
        input.read_exact(&mut u32buf)?;
        let cols = u32::from_le_bytes(u32buf);
        input.read_exact(&mut u32buf)?;
        let rows = u32::from_le_bytes(u32buf);
        layers.push((cols, rows));
    }
    input.read_exact(&mut u64buf)?;
    let count = u64::from_le_bytes(u64buf) as usize;
    let expected: usize = layers.iter().map(|&(i, o)| (i as usize + 1) * o as usize).sum();
    if count != expected {
        bail!("value count {count} does not match the layer header ({expected})");
    }
    input.read_exact(&mut u64buf)?;
    let log_z = f64::from_le_bytes(u64buf);
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        input.read_exact(&mut u64buf)?;
        values.push(f64::from_le_bytes(u64buf));
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        bail!("{} trailing bytes after the parameter values", rest.len());
    }
    Ok(StoredParams { layers, log_z, values })
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(MetricsRow::HEADER)?;
    for row in rows {
        w.write_record(row.fields())?;
    }
    w.flush()?;
    Ok(())
}

/// Long format: one `step,length,count` line per non-empty bin.
pub fn write_length_histograms(path: &Path, hists: &[LengthHistogram]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "length", "count"])?;
    for h in hists {
        for (len, count) in &h.counts {
            w.write_record([h.step.to_string(), len.to_string(), count.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_params_file(path: &Path, agent: &GfnAgent) -> anyhow::Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_params(BufWriter::new(f), agent)?;
    Ok(())
}
