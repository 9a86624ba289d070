//! The training loop: evolve the population, mix online and replayed
//! trajectories, take an optimizer step on the star agent, record metrics.
//!
//! Every source of randomness draws from its own `(seed, purpose, step)`
//! stream, so a run is reproducible bit for bit and an EGFN run and its
//! baseline share the same initial star agent and first online samples.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::time::Instant;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::agent::{sample_trajectories, GfnAgent, ObjectiveKind, Trajectory};
use crate::envs::{Environment, DEFAULT_ENUMERATION_CAP};
use crate::evolution::{evaluate_population, next_generation, EvoConfig, Population};
use crate::losses::batch_loss;
use crate::numnet::AdamState;
use crate::oracle::{exact_learned_density, l1_distance, true_density, uniform_l1, DensityTable, TopK, VisitWindow};
use crate::replay::{ceil_fraction, ReplayBuffer, ReplayConfig};
use crate::rng::{purpose, stream};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_steps: u64,
    /// Trajectories per training batch.
    pub batch_size: usize,
    /// Share of each batch sampled fresh from the star agent.
    pub online_ratio: f64,
    /// `None` picks the objective's default.
    pub lr: Option<f64>,
    /// Learning rate of `log_z` (TB only).
    pub z_lr: f64,
    pub explore_eps: f64,
    /// Number of recent online terminals in the empirical density window.
    pub metrics_window: usize,
    pub steps_per_batch: usize,
    pub hidden_dims: Vec<usize>,
    pub uniform_pb: bool,
    /// Threads used to evaluate the population.
    pub workers: usize,
    pub top_k: usize,
    /// Steps at which the batch's trajectory-length histogram is recorded.
    pub length_checkpoints: Vec<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 2500,
            batch_size: 16,
            online_ratio: 0.5,
            lr: None,
            z_lr: 0.1,
            explore_eps: 0.0,
            metrics_window: 200_000,
            steps_per_batch: 1,
            hidden_dims: vec![256, 256],
            uniform_pb: false,
            workers: 1,
            top_k: 100,
            length_checkpoints: vec![500, 1000, 1500, 2000, 2500],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return fail("train.batch_size must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.online_ratio) {
            return fail(format!("train.online_ratio must be in [0, 1], got {}", self.online_ratio));
        }
        if let Some(lr) = self.lr {
            if !(lr > 0.0 && lr.is_finite()) {
                return fail(format!("train.lr must be > 0, got {lr}"));
            }
        }
        if !(self.z_lr > 0.0 && self.z_lr.is_finite()) {
            return fail(format!("train.z_lr must be > 0, got {}", self.z_lr));
        }
        if !(0.0..=1.0).contains(&self.explore_eps) {
            return fail(format!("train.explore_eps must be in [0, 1], got {}", self.explore_eps));
        }
        if self.steps_per_batch == 0 {
            return fail("train.steps_per_batch must be >= 1".into());
        }
        if self.workers == 0 {
            return fail("train.workers must be >= 1".into());
        }
        if self.top_k == 0 {
            return fail("train.top_k must be >= 1".into());
        }
        if self.metrics_window == 0 {
            return fail("train.metrics_window must be >= 1".into());
        }
        if self.hidden_dims.contains(&0) {
            return fail("train.hidden_dims entries must be positive".into());
        }
        Ok(())
    }

    pub fn resolved_lr(&self, kind: ObjectiveKind) -> f64 {
        self.lr.unwrap_or_else(|| kind.default_lr())
    }

    pub fn online_count(&self) -> usize {
        ceil_fraction(self.online_ratio, self.batch_size)
    }
}

/// Bookkeeping knobs that do not affect training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerOptions {
    /// A metrics row every `cadence` steps (and at the last step).
    pub cadence: u64,
    /// Largest node count for which the exact learned density is computed.
    pub exact_l1_max_states: u128,
    /// Fill the `wall_ms` column; off keeps metrics byte-deterministic.
    pub wall_clock: bool,
}

impl Default for TrainerOptions {
    fn default() -> Self {
        Self {
            cadence: 10,
            exact_l1_max_states: 100_000,
            wall_clock: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub step: u64,
    pub loss: f64,
    pub log_z: Option<f64>,
    pub states_visited: u64,
    pub reward_calls: u64,
    pub modes_cells: u64,
    pub modes_regions: u64,
    pub l1_empirical: Option<f64>,
    pub l1_exact: Option<f64>,
    pub top100: Option<f64>,
    pub buffer_size: u64,
    pub wall_ms: Option<u64>,
}

impl MetricsRow {
    pub const HEADER: [&'static str; 12] = [
        "step",
        "loss",
        "log_z",
        "states_visited",
        "reward_calls",
        "modes_cells",
        "modes_regions",
        "l1_empirical",
        "l1_exact",
        "top100",
        "buffer_size",
        "wall_ms",
    ];

    /// Text fields in [`MetricsRow::HEADER`] order; absent values are empty.
    pub fn fields(&self) -> [String; 12] {
        fn opt<T: ToString>(v: Option<T>) -> String {
            v.map(|x| x.to_string()).unwrap_or_default()
        }
        [
            self.step.to_string(),
            self.loss.to_string(),
            opt(self.log_z),
            self.states_visited.to_string(),
            self.reward_calls.to_string(),
            self.modes_cells.to_string(),
            self.modes_regions.to_string(),
            opt(self.l1_empirical),
            opt(self.l1_exact),
            opt(self.top100),
            self.buffer_size.to_string(),
            opt(self.wall_ms),
        ]
    }
}

/// Trajectory-length counts of one training batch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LengthHistogram {
    pub step: u64,
    pub counts: BTreeMap<usize, u64>,
}

impl LengthHistogram {
    pub fn from_lengths(step: u64, lengths: impl IntoIterator<Item = usize>) -> Self {
        let mut counts = BTreeMap::new();
        for l in lengths {
            *counts.entry(l).or_insert(0) += 1;
        }
        Self { step, counts }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunRecord {
    pub rows: Vec<MetricsRow>,
    pub length_histograms: Vec<LengthHistogram>,
}

/// End-of-run totals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub steps: u64,
    pub reward_calls: u64,
    pub states_visited: u64,
    pub modes_cells: u64,
    pub modes_regions: u64,
    pub discovered_modes: Vec<String>,
    pub final_loss: Option<f64>,
    pub log_z: Option<f64>,
    pub l1_exact: Option<f64>,
    pub l1_empirical: Option<f64>,
    pub l1_uniform: Option<f64>,
    pub top100: Option<f64>,
    pub buffer_size: u64,
    pub generations: u64,
}

pub struct Trainer<E: Environment> {
    env: E,
    objective: ObjectiveKind,
    train: TrainConfig,
    evo: EvoConfig,
    seed: u64,
    opts: TrainerOptions,
    star: GfnAgent,
    adam: AdamState,
    z_adam: AdamState,
    population: Option<Population>,
    buffer: ReplayBuffer<E::State>,
    pool: Option<rayon::ThreadPool>,
    step: u64,
    reward_calls: u64,
    visited: HashSet<E::State>,
    modes: BTreeSet<E::State>,
    mode_regions: BTreeSet<u64>,
    unnamed_regions: u64,
    truth: Option<DensityTable>,
    exact_enabled: bool,
    window: Option<VisitWindow>,
    topk: TopK,
    record: RunRecord,
    last_loss: Option<f64>,
    started: Instant,
}

impl<E: Environment> Trainer<E> {
    pub fn new(
        env: E,
        objective: ObjectiveKind,
        train: TrainConfig,
        evo: EvoConfig,
        replay: ReplayConfig,
        seed: u64,
        opts: TrainerOptions,
    ) -> Result<Self> {
        train.validate()?;
        if !evo.disabled {
            evo.validate()?;
        }
        if opts.cadence == 0 {
            return Err(Error::Config("output.cadence must be >= 1".into()));
        }
        let buffer = ReplayBuffer::new(replay)?;
        let mut star = GfnAgent::init(
            objective,
            &env,
            &train.hidden_dims,
            &mut stream(seed, purpose::STAR_INIT, 0, 0),
        )?;
        star.uniform_pb = train.uniform_pb;
        let adam = AdamState::new(star.params.len());
        let population = (!evo.disabled).then(|| Population::init(&star.spec, evo.population_size, seed));
        let pool = if train.workers > 1 && !evo.disabled {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(train.workers)
                    .build()
                    .map_err(|e| Error::Config(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };
        let truth = match true_density(&env, DEFAULT_ENUMERATION_CAP) {
            Ok(t) => Some(t),
            Err(Error::OracleUnavailable { .. }) => None,
            Err(e) => return Err(e),
        };
        let exact_enabled = truth.is_some() && env.num_states() <= opts.exact_l1_max_states;
        let window = truth
            .as_ref()
            .map(|t| VisitWindow::new(train.metrics_window, t.len()));
        let topk = TopK::new(train.top_k)?;
        Ok(Self {
            env,
            objective,
            evo,
            seed,
            opts,
            star,
            adam,
            z_adam: AdamState::new(1),
            population,
            buffer,
            pool,
            step: 0,
            reward_calls: 0,
            visited: HashSet::new(),
            modes: BTreeSet::new(),
            mode_regions: BTreeSet::new(),
            unnamed_regions: 0,
            truth,
            exact_enabled,
            window,
            topk,
            record: RunRecord::default(),
            last_loss: None,
            started: Instant::now(),
            train,
        })
    }

    pub fn env(&self) -> &E {
        &self.env
    }

    pub fn star(&self) -> &GfnAgent {
        &self.star
    }

    pub fn population(&self) -> Option<&Population> {
        self.population.as_ref()
    }

    pub fn buffer(&self) -> &ReplayBuffer<E::State> {
        &self.buffer
    }

    pub fn record(&self) -> &RunRecord {
        &self.record
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    pub fn truth(&self) -> Option<&DensityTable> {
        self.truth.as_ref()
    }

    pub fn discovered_modes(&self) -> impl Iterator<Item = &E::State> {
        self.modes.iter()
    }

    /// Reward evaluations per step: `k * E + ceil(delta * T)`, or just the
    /// online share without a population.
    pub fn reward_calls_per_step(&self) -> u64 {
        let online = self.train.online_count() as u64;
        if self.evo.disabled {
            online
        } else {
            (self.evo.population_size * self.evo.eval_episodes) as u64 + online
        }
    }

    /// Bookkeeping for every freshly evaluated trajectory.
    fn note_fresh(&mut self, tau: &Trajectory<E::State>) -> Result<()> {
        let x = tau.terminal();
        self.topk.push(tau.reward);
        if self.visited.insert(x.clone()) && self.env.is_mode(x)? && self.modes.insert(x.clone()) {
            match self.env.mode_region(x) {
                Some(r) => {
                    self.mode_regions.insert(r);
                }
                None => self.unnamed_regions += 1,
            }
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<&RunRecord> {
        while self.step < self.train.total_steps {
            self.train_step()?;
        }
        Ok(&self.record)
    }

    pub fn train_step(&mut self) -> Result<()> {
        let step = self.step + 1;

        if let Some(pop) = self.population.as_mut() {
            let generation = pop.generation;
            let per_member = evaluate_population(
                pop,
                &self.star,
                &self.env,
                self.evo.eval_episodes,
                self.seed,
                self.pool.as_ref(),
            )?;
            let mut rng = stream(self.seed, purpose::SELECTION, generation, 0);
            let (next, report) = next_generation(pop, &self.evo, &mut rng, Some(&self.star.params))?;
            debug!("step {step}: fitness {:?}, elites {:?}", report.fitness, report.elites);
            *pop = next;
            for tau in per_member.into_iter().flatten() {
                self.reward_calls += 1;
                self.note_fresh(&tau)?;
                self.buffer.insert(tau);
            }
        }

        let mut n_online = self.train.online_count();
        let mut n_offline = self.train.batch_size - n_online;
        if n_online == 0 && self.buffer.is_empty() {
            warn!("step {step}: replay buffer is empty, using an all-online batch");
            n_online = self.train.batch_size;
            n_offline = 0;
        }
        let online = sample_trajectories(
            &self.star,
            &self.env,
            n_online,
            &mut stream(self.seed, purpose::ONLINE, step, 0),
            self.train.explore_eps,
        )?;
        let mut batch = Vec::with_capacity(self.train.batch_size);
        for tau in online {
            self.reward_calls += 1;
            self.note_fresh(&tau)?;
            if let Some(w) = self.window.as_mut() {
                w.push(self.env.terminal_index(tau.terminal()));
            }
            self.buffer.insert(tau.clone());
            batch.push(tau);
        }
        if n_offline > 0 {
            let replayed = self
                .buffer
                .sample_batch(n_offline, &mut stream(self.seed, purpose::OFFLINE, step, 0))?;
            batch.extend(replayed);
        }

        let lr = self.train.resolved_lr(self.objective);
        let mut loss = f64::NAN;
        for _ in 0..self.train.steps_per_batch {
            let report = batch_loss(&self.star, &self.env, &batch)?;
            if !report.mean_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    dump: self.dump_batch(&batch, &report.losses),
                });
            }
            loss = report.mean_loss;
            self.adam
                .step(self.star.params.values_mut(), report.grad.values(), lr)?;
            if self.objective == ObjectiveKind::Tb {
                let mut z = [self.star.log_z];
                self.z_adam.step(&mut z, &[report.grad_log_z], self.train.z_lr)?;
                self.star.log_z = z[0];
            }
        }
        self.last_loss = Some(loss);

        if self.train.length_checkpoints.contains(&step) {
            self.record
                .length_histograms
                .push(LengthHistogram::from_lengths(step, batch.iter().map(Trajectory::len)));
        }
        self.step = step;
        if step.is_multiple_of(self.opts.cadence) || step == self.train.total_steps {
            let row = self.metrics_row(loss)?;
            self.record.rows.push(row);
        }
        Ok(())
    }

    fn dump_batch(&self, batch: &[Trajectory<E::State>], losses: &[f64]) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "log_z {}", self.star.log_z);
        for (i, tau) in batch.iter().enumerate() {
            let _ = writeln!(
                out,
                "{i}: reward {} loss {} actions {:?} terminal {}",
                tau.reward,
                losses.get(i).copied().unwrap_or(f64::NAN),
                tau.actions,
                self.env.describe(tau.terminal())
            );
        }
        out
    }

    pub fn exact_l1(&self) -> Result<Option<f64>> {
        match (&self.truth, self.exact_enabled) {
            (Some(truth), true) => {
                let learned = exact_learned_density(&self.star, &self.env, self.opts.exact_l1_max_states)?;
                Ok(Some(l1_distance(&learned, truth)))
            }
            _ => Ok(None),
        }
    }

    pub fn empirical_l1(&self) -> Option<f64> {
        match (&self.window, &self.truth) {
            (Some(w), Some(t)) => w.l1(t),
            _ => None,
        }
    }

    pub fn mode_counts(&self) -> (u64, u64) {
        (
            self.modes.len() as u64,
            self.mode_regions.len() as u64 + self.unnamed_regions,
        )
    }

    fn metrics_row(&self, loss: f64) -> Result<MetricsRow> {
        let (cells, regions) = self.mode_counts();
        Ok(MetricsRow {
            step: self.step,
            loss,
            log_z: (self.objective == ObjectiveKind::Tb).then_some(self.star.log_z),
            states_visited: self.visited.len() as u64,
            reward_calls: self.reward_calls,
            modes_cells: cells,
            modes_regions: regions,
            l1_empirical: self.empirical_l1(),
            l1_exact: self.exact_l1()?,
            top100: self.topk.mean().map(|(m, _)| m),
            buffer_size: self.buffer.len() as u64,
            wall_ms: self
                .opts
                .wall_clock
                .then(|| self.started.elapsed().as_millis() as u64),
        })
    }

    pub fn summary(&self) -> Result<RunSummary> {
        let (cells, regions) = self.mode_counts();
        Ok(RunSummary {
            steps: self.step,
            reward_calls: self.reward_calls,
            states_visited: self.visited.len() as u64,
            modes_cells: cells,
            modes_regions: regions,
            discovered_modes: self.modes.iter().map(|m| self.env.describe(m)).collect(),
            final_loss: self.last_loss,
            log_z: (self.objective == ObjectiveKind::Tb).then_some(self.star.log_z),
            l1_exact: self.exact_l1()?,
            l1_empirical: self.empirical_l1(),
            l1_uniform: self.truth.as_ref().map(uniform_l1),
            top100: self.topk.mean().map(|(m, _)| m),
            buffer_size: self.buffer.len() as u64,
            generations: self.population.as_ref().map_or(0, |p| p.generation),
        })
    }
}
