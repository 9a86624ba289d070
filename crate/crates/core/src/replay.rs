//! Capacity-bounded trajectory store with worst-reward-first eviction and
//! percentile-stratified sampling.

use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::Trajectory;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplayConfig {
    pub capacity: usize,
    /// Entries at or above this reward percentile form the priority stratum.
    pub priority_percentile: f64,
    /// Fraction of each batch drawn from the priority stratum.
    pub priority_split: f64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            capacity: 1000,
            priority_percentile: 80.0,
            priority_split: 0.5,
        }
    }
}

impl ReplayConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 {
            return Err(Error::Config("replay.capacity must be at least 1".into()));
        }
        if !(self.priority_percentile > 0.0 && self.priority_percentile < 100.0) {
            return Err(Error::Config(format!(
                "replay.priority_percentile must be in (0, 100), got {}",
                self.priority_percentile
            )));
        }
        if !(self.priority_split > 0.0 && self.priority_split < 1.0) {
            return Err(Error::Config(format!(
                "replay.priority_split must be in (0, 1), got {}",
                self.priority_split
            )));
        }
        Ok(())
    }

    /// Number of priority draws in a batch of `n`.
    pub fn priority_draws(&self, n: usize) -> usize {
        ceil_fraction(self.priority_split, n)
    }
}

/// `ceil(frac * n)` with a small guard against products like `0.7 * 10`
/// landing just above an integer.
pub fn ceil_fraction(frac: f64, n: usize) -> usize {
    ((frac * n as f64) - 1e-9).ceil().max(0.0) as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayEntry<S> {
    pub trajectory: Trajectory<S>,
    pub reward: f64,
    pub insert_seq: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InsertOutcome<S> {
    Appended,
    Replaced(ReplayEntry<S>),
    Rejected,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer<S> {
    cfg: ReplayConfig,
    entries: Vec<ReplayEntry<S>>,
    next_seq: u64,
}

/// Indices drawn for one batch; the first `priority` come from the priority stratum.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchDraw {
    pub indices: Vec<usize>,
    pub priority: usize,
}

impl<S: Clone> ReplayBuffer<S> {
    pub fn new(cfg: ReplayConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            entries: Vec::with_capacity(cfg.capacity),
            cfg,
            next_seq: 0,
        })
    }

    pub fn config(&self) -> &ReplayConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ReplayEntry<S>] {
        &self.entries
    }

    pub fn rewards(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|e| e.reward)
    }

    /// Appends under capacity; when full, replaces the lowest-reward entry
    /// (oldest first among ties) only if the new reward is strictly higher.
    pub fn insert(&mut self, trajectory: Trajectory<S>) -> InsertOutcome<S> {
        let entry = ReplayEntry {
            reward: trajectory.reward,
            trajectory,
            insert_seq: self.next_seq,
        };
        self.next_seq += 1;
        if self.entries.len() < self.cfg.capacity {
            self.entries.push(entry);
            return InsertOutcome::Appended;
        }
        let worst = self.eviction_candidate().expect("full buffer is non-empty");
        if entry.reward > self.entries[worst].reward {
            InsertOutcome::Replaced(std::mem::replace(&mut self.entries[worst], entry))
        } else {
            InsertOutcome::Rejected
        }
    }

    pub fn eviction_candidate(&self) -> Option<usize> {
        self.entries
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                a.reward
                    .total_cmp(&b.reward)
                    .then(a.insert_seq.cmp(&b.insert_seq))
            })
            .map(|(i, _)| i)
    }

    /// Reward threshold of the priority stratum: the value at sorted
    /// position `min(ceil(p * N / 100), N - 1)`.
    pub fn priority_threshold(&self) -> Option<f64> {
        if self.entries.is_empty() {
            return None;
        }
        let mut rewards: Vec<f64> = self.rewards().collect();
        rewards.sort_by(f64::total_cmp);
        let n = rewards.len();
        let rank = ((self.cfg.priority_percentile * n as f64 / 100.0) - 1e-9).ceil() as usize;
        Some(rewards[rank.min(n - 1)])
    }

    /// `(priority, rest)` entry indices against the live rewards.
    pub fn strata(&self) -> (Vec<usize>, Vec<usize>) {
        let Some(threshold) = self.priority_threshold() else {
            return (Vec::new(), Vec::new());
        };
        (0..self.entries.len()).partition(|&i| self.entries[i].reward >= threshold)
    }

    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<BatchDraw> {
        if self.entries.is_empty() {
            return Err(Error::Usage("sampling from an empty replay buffer".into()));
        }
        let (priority, rest) = self.strata();
        let n_priority = if rest.is_empty() {
            n
        } else if priority.is_empty() {
            0
        } else {
            self.cfg.priority_draws(n).min(n)
        };
        let mut indices = Vec::with_capacity(n);
        indices.extend((0..n_priority).map(|_| priority[rng.random_range(0..priority.len())]));
        indices.extend((n_priority..n).map(|_| rest[rng.random_range(0..rest.len())]));
        Ok(BatchDraw {
            indices,
            priority: n_priority,
        })
    }

    pub fn sample_batch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Trajectory<S>>> {
        let draw = self.sample_indices(n, rng)?;
        Ok(draw
            .indices
            .iter()
            .map(|&i| self.entries[i].trajectory.clone())
            .collect())
    }

    /// One line per entry: space-separated actions, a comma, the reward.
    pub fn write_snapshot<W: Write>(&self, mut out: W) -> Result<()> {
        for e in &self.entries {
            let record = SnapshotRecord {
                actions: e.trajectory.actions.clone(),
                reward: e.reward,
            };
            writeln!(out, "{record}")?;
        }
        Ok(())
    }
}

/// One buffer-snapshot line.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotRecord {
    pub actions: Vec<usize>,
    pub reward: f64,
}

impl std::fmt::Display for SnapshotRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, a) in self.actions.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, ",{:?}", self.reward)
    }
}

impl std::str::FromStr for SnapshotRecord {
    type Err = String;

    fn from_str(line: &str) -> std::result::Result<Self, String> {
        let (acts, reward) = line
            .rsplit_once(',')
            .ok_or_else(|| format!("missing comma in {line:?}"))?;
        let actions = acts
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|e| format!("bad action {t:?}: {e}")))
            .collect::<std::result::Result<_, _>>()?;
        let reward = reward
            .trim()
            .parse::<f64>()
            .map_err(|e| format!("bad reward {reward:?}: {e}"))?;
        Ok(Self { actions, reward })
    }
}

pub fn read_snapshot<R: BufRead>(reader: R) -> Result<Vec<SnapshotRecord>> {
    reader
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(i, line)| {
            line?.parse().map_err(|message| Error::Parse {
                path: "<snapshot>".into(),
                line: i + 1,
                message,
            })
        })
        .collect()
}
