//! JSON run configuration with dotted-key overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agent::ObjectiveKind;
use crate::envs::{HypergridEnv, RewardTable, SeqEnv};
use crate::evolution::EvoConfig;
use crate::replay::ReplayConfig;
use crate::trainer::{TrainConfig, TrainerOptions};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub env: EnvConfig,
    #[serde(default = "default_objective")]
    pub objective: ObjectiveKind,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub evo: EvoConfig,
    #[serde(default)]
    pub replay: ReplayConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_objective() -> ObjectiveKind {
    ObjectiveKind::Tb
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum EnvConfig {
    Hypergrid {
        #[serde(rename = "D")]
        dims: usize,
        #[serde(rename = "H")]
        horizon: usize,
        r0: f64,
        #[serde(default = "default_r1")]
        r1: f64,
        #[serde(default = "default_r2")]
        r2: f64,
    },
    Sequence {
        alphabet: String,
        #[serde(rename = "L")]
        length: usize,
        #[serde(default)]
        table_path: Option<PathBuf>,
        #[serde(default = "default_beta")]
        beta: f64,
        #[serde(default)]
        mode_tol: f64,
    },
}

fn default_r1() -> f64 {
    0.5
}

fn default_r2() -> f64 {
    2.0
}

fn default_beta() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Run directory; relative paths are joined to the output root.
    pub dir: Option<PathBuf>,
    pub cadence: u64,
    pub buffer_snapshot: bool,
    pub wall_clock: bool,
    pub exact_l1_max_states: u64,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: None,
            cadence: 10,
            buffer_snapshot: true,
            wall_clock: false,
            exact_l1_max_states: 100_000,
        }
    }
}

impl OutputConfig {
    pub fn trainer_options(&self) -> TrainerOptions {
        TrainerOptions {
            cadence: self.cadence,
            exact_l1_max_states: self.exact_l1_max_states as u128,
            wall_clock: self.wall_clock,
        }
    }
}

/// A built environment of either kind.
#[derive(Debug, Clone)]
pub enum AnyEnv {
    Grid(HypergridEnv),
    Seq(SeqEnv),
}

/// Sets `dotted.key` in a JSON document. The value is parsed as JSON when
/// possible and kept as a string otherwise.
pub fn apply_override(doc: &mut Value, key: &str, raw: &str) -> Result<()> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    for part in &parts[..parts.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?} descends into a non-object")))?;
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| Error::Config(format!("override {key:?} descends into a non-object")))?;
    obj.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Splits `key=value`.
pub fn parse_override(spec: &str) -> Result<(String, String)> {
    spec.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not key=value")))
}

impl RunConfig {
    pub fn from_value(doc: Value) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_value(doc).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut doc: Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for (k, v) in overrides {
            apply_override(&mut doc, k, v)?;
        }
        Self::from_value(doc)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json_str(&text, overrides)?;
        if let EnvConfig::Sequence {
            table_path: Some(p), ..
        } = &mut cfg.env
        {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !self.evo.disabled {
            self.evo.validate()?;
        }
        self.replay.validate()?;
        if self.output.cadence == 0 {
            return Err(Error::Config("output.cadence must be >= 1".into()));
        }
        match &self.env {
            EnvConfig::Hypergrid { .. } => {}
            EnvConfig::Sequence {
                table_path, alphabet, ..
            } => {
                if table_path.is_none() {
                    return Err(Error::Config("env.table_path is required for a sequence environment".into()));
                }
                if alphabet.is_empty() {
                    return Err(Error::Config("env.alphabet must not be empty".into()));
                }
            }
        }
        Ok(())
    }

    /// Copy with every implicit default written out.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        out.train.lr = Some(self.train.resolved_lr(self.objective));
        out
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn build_env(&self) -> Result<AnyEnv> {
        match &self.env {
            EnvConfig::Hypergrid {
                dims,
                horizon,
                r0,
                r1,
                r2,
            } => Ok(AnyEnv::Grid(HypergridEnv::new(*dims, *horizon, *r0, *r1, *r2)?)),
            EnvConfig::Sequence {
                alphabet,
                length,
                table_path,
                beta,
                mode_tol,
            } => {
                let path = table_path
                    .as_ref()
                    .ok_or_else(|| Error::Config("env.table_path is required for a sequence environment".into()))?;
                let table = RewardTable::load(path)?;
                let env = SeqEnv::new(alphabet.chars().collect(), *length, &table, *beta)?;
                Ok(AnyEnv::Seq(env.with_mode_tol(*mode_tol)?))
            }
        }
    }
}
