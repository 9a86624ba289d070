//! Population of policy parameter vectors evolved on trajectory-reward fitness.
//!
//! One generation: evaluate every member, keep the elites bit-exactly, pick a
//! seed set by fitness-proportional selection, top it up with row-swap
//! crossover children, mutate the non-elites and periodically overwrite the
//! worst slot with the gradient-trained agent.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{sample_trajectories, GfnAgent, Trajectory};
use crate::envs::Environment;
use crate::numnet::{MlpSpec, ParamVector, RowHandle};
use crate::rng::{purpose, stream};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    Roulette,
    Tournament,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvoConfig {
    /// Turns the population off, leaving the plain replay-buffer baseline.
    pub disabled: bool,
    pub population_size: usize,
    pub eval_episodes: usize,
    pub elite_frac: f64,
    pub mutation_strength: f64,
    pub p_mutation: f64,
    pub row_mut_frac: f64,
    /// Generations between star-agent reinsertions; 0 disables.
    pub sync_period: u64,
    pub selection: Selection,
    pub tournament_size: usize,
}

impl Default for EvoConfig {
    fn default() -> Self {
        Self {
            disabled: false,
            population_size: 5,
            eval_episodes: 4,
            elite_frac: 0.2,
            mutation_strength: 1.0,
            p_mutation: 0.9,
            row_mut_frac: 0.1,
            sync_period: 10,
            selection: Selection::Roulette,
            tournament_size: 3,
        }
    }
}

impl EvoConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.population_size < 2 {
            return fail(format!("evo.population_size must be >= 2, got {}", self.population_size));
        }
        if self.eval_episodes == 0 {
            return fail("evo.eval_episodes must be >= 1".into());
        }
        if !(self.elite_frac > 0.0 && self.elite_frac < 1.0) {
            return fail(format!("evo.elite_frac must be in (0, 1), got {}", self.elite_frac));
        }
        if !(self.mutation_strength > 0.0 && self.mutation_strength.is_finite()) {
            return fail(format!("evo.mutation_strength must be > 0, got {}", self.mutation_strength));
        }
        if !(0.0..=1.0).contains(&self.p_mutation) {
            return fail(format!("evo.p_mutation must be in [0, 1], got {}", self.p_mutation));
        }
        if !(self.row_mut_frac > 0.0 && self.row_mut_frac <= 1.0) {
            return fail(format!("evo.row_mut_frac must be in (0, 1], got {}", self.row_mut_frac));
        }
        if self.selection == Selection::Tournament && self.tournament_size == 0 {
            return fail("evo.tournament_size must be >= 1".into());
        }
        Ok(())
    }

    pub fn elite_count(&self) -> usize {
        elite_count(self.population_size, self.elite_frac)
    }

    /// Size of the fitness-proportional draw, `floor((1 - eps) * k)`.
    pub fn selection_draws(&self) -> usize {
        (((1.0 - self.elite_frac) * self.population_size as f64) + 1e-9).floor() as usize
    }

    /// Whether the star agent is reinserted when moving past `generation`.
    pub fn sync_due(&self, generation: u64) -> bool {
        self.sync_period > 0 && (generation + 1).is_multiple_of(self.sync_period)
    }
}

pub fn elite_count(k: usize, elite_frac: f64) -> usize {
    ((elite_frac * k as f64 - 1e-9).ceil() as usize).clamp(1, k)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub members: Vec<ParamVector>,
    /// NaN until evaluated.
    pub fitness: Vec<f64>,
    pub generation: u64,
}

impl Population {
    /// `k` freshly initialized members, each from its own seeded stream.
    pub fn init(spec: &MlpSpec, k: usize, seed: u64) -> Self {
        let members = (0..k)
            .map(|i| spec.init_params(&mut stream(seed, purpose::POP_INIT, i as u64, 0)))
            .collect();
        Self {
            members,
            fitness: vec![f64::NAN; k],
            generation: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn is_evaluated(&self) -> bool {
        self.fitness.iter().all(|f| f.is_finite())
    }
}

/// Indices of the `count` fittest members; ties go to the lower index.
pub fn select_elites(fitness: &[f64], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..fitness.len()).collect();
    order.sort_by(|&a, &b| fitness[b].total_cmp(&fitness[a]).then(a.cmp(&b)));
    order.truncate(count);
    order
}

/// Slot replaced at reinsertion: lowest fitness, ties go to the higher index.
pub fn worst_slot(fitness: &[f64]) -> Option<usize> {
    (0..fitness.len()).rev().min_by(|&a, &b| fitness[a].total_cmp(&fitness[b]))
}

/// `count` draws with replacement, probability proportional to shifted fitness.
pub fn roulette_select<R: Rng + ?Sized>(fitness: &[f64], count: usize, rng: &mut R) -> Vec<usize> {
    if count == 0 || fitness.is_empty() {
        return Vec::new();
    }
    let min = fitness.iter().copied().fold(f64::INFINITY, f64::min);
    let max = fitness.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shift = 1e-8 * (max - min) + 1e-12;
    let weights: Vec<f64> = fitness.iter().map(|f| f - min + shift).collect();
    let total: f64 = weights.iter().sum();
    (0..count)
        .map(|_| {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            for (i, w) in weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    return i;
                }
            }
            weights.len() - 1
        })
        .collect()
}

/// `count` tournaments of `size` uniform entrants each; the fittest entrant wins.
pub fn tournament_select<R: Rng + ?Sized>(
    fitness: &[f64],
    count: usize,
    size: usize,
    rng: &mut R,
) -> Vec<usize> {
    if fitness.is_empty() {
        return Vec::new();
    }
    (0..count)
        .map(|_| {
            (0..size.max(1))
                .map(|_| rng.random_range(0..fitness.len()))
                .reduce(|a, b| if fitness[b] > fitness[a] { b } else { a })
                .expect("at least one entrant")
        })
        .collect()
}

/// One row-copy step of a crossover.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowSwap {
    pub layer: usize,
    pub row: usize,
    /// Below 0.5 copies the second parent's row into the first child,
    /// otherwise the first child's row into the second child.
    pub r: f64,
}

/// Draws the row copies for every layer: a count uniform in `0..N`, then a
/// uniform row index and coin per copy.
pub fn draw_crossover_plan<R: Rng + ?Sized>(params: &ParamVector, rng: &mut R) -> Vec<RowSwap> {
    let mut plan = Vec::new();
    for (layer, l) in params.layout().iter().enumerate() {
        let n = l.rows;
        let copies = rng.random_range(0..n);
        for _ in 0..copies {
            let row = rng.random_range(0..n);
            let r = rng.random::<f64>();
            plan.push(RowSwap { layer, row, r });
        }
    }
    plan
}

/// Applies `plan` to copies of `a` and `b`.
pub fn apply_crossover(a: &ParamVector, b: &ParamVector, plan: &[RowSwap]) -> Result<(ParamVector, ParamVector)> {
    if !a.same_layout(b) {
        return Err(Error::Config("crossover parents have different layouts".into()));
    }
    let mut child_a = a.clone();
    let mut child_b = b.clone();
    for swap in plan {
        let handle = row_handle(&child_a, swap.layer, swap.row)?;
        if swap.r < 0.5 {
            child_a.copy_row_from(b, handle);
        } else {
            child_b.copy_row_from(&child_a, handle);
        }
    }
    Ok((child_a, child_b))
}

fn row_handle(params: &ParamVector, layer: usize, row: usize) -> Result<RowHandle> {
    params
        .row_views(layer)?
        .get(row)
        .copied()
        .ok_or_else(|| Error::Config(format!("row {row} out of range in layer {layer}")))
}

pub fn crossover<R: Rng + ?Sized>(a: &ParamVector, b: &ParamVector, rng: &mut R) -> Result<(ParamVector, ParamVector)> {
    if !a.same_layout(b) {
        return Err(Error::Config("crossover parents have different layouts".into()));
    }
    let plan = draw_crossover_plan(a, rng);
    apply_crossover(a, b, &plan)
}

/// With probability `p_mutation`, adds `Normal(0, gamma^2)` noise to every
/// entry of a uniformly chosen `row_mut_frac` share of rows (at least one).
/// Returns whether the vector was perturbed.
pub fn mutate<R: Rng + ?Sized>(theta: &mut ParamVector, cfg: &EvoConfig, rng: &mut R) -> Result<bool> {
    if !(cfg.mutation_strength > 0.0) {
        return Err(Error::Config("mutation strength must be positive".into()));
    }
    if rng.random::<f64>() >= cfg.p_mutation {
        return Ok(false);
    }
    let rows = theta.all_rows();
    let m = ((cfg.row_mut_frac * rows.len() as f64).round() as usize).clamp(1, rows.len());
    let noise = Normal::new(0.0, cfg.mutation_strength)
        .map_err(|e| Error::Config(format!("mutation noise: {e}")))?;
    let mut chosen = sample(rng, rows.len(), m).into_vec();
    chosen.sort_unstable();
    for i in chosen {
        for v in theta.row_mut(rows[i]) {
            *v += noise.sample(rng);
        }
    }
    Ok(true)
}

/// Where a slot of the next population came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotOrigin {
    Elite(usize),
    Selected(usize),
    Crossover { elite: usize, partner: usize },
    Star,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationReport {
    pub fitness: Vec<f64>,
    pub elites: Vec<usize>,
    /// Raw selection draws (with repetition).
    pub draws: Vec<usize>,
    /// Distinct selected members in ascending order.
    pub selected: Vec<usize>,
    pub origins: Vec<SlotOrigin>,
    pub mutated: Vec<bool>,
    pub reinserted: Option<usize>,
}

/// Builds the next population from an evaluated one.
///
/// Elite slots keep their index; the remaining slots are filled in ascending
/// order first with clones of the distinct selected members, then with
/// crossover children (first child of a random elite and a random selected
/// member). Every non-elite slot is then mutated with probability
/// `p_mutation`, and on schedule the worst slot receives `star`.
pub fn next_generation<R: Rng + ?Sized>(
    pop: &Population,
    cfg: &EvoConfig,
    rng: &mut R,
    star: Option<&ParamVector>,
) -> Result<(Population, GenerationReport)> {
    let k = pop.len();
    if k != cfg.population_size {
        return Err(Error::Config(format!(
            "population has {k} members, config expects {}",
            cfg.population_size
        )));
    }
    if !pop.is_evaluated() {
        return Err(Error::Usage("next_generation on an unevaluated population".into()));
    }
    let elites = select_elites(&pop.fitness, cfg.elite_count());
    let draws = match cfg.selection {
        Selection::Roulette => roulette_select(&pop.fitness, cfg.selection_draws(), rng),
        Selection::Tournament => tournament_select(&pop.fitness, cfg.selection_draws(), cfg.tournament_size, rng),
    };
    let mut selected = draws.clone();
    selected.sort_unstable();
    selected.dedup();

    let mut members: Vec<Option<ParamVector>> = vec![None; k];
    let mut origins = vec![SlotOrigin::Star; k];
    for &e in &elites {
        members[e] = Some(pop.members[e].clone());
        origins[e] = SlotOrigin::Elite(e);
    }
    let open: Vec<usize> = (0..k).filter(|i| members[*i].is_none()).collect();
    let mut open_iter = open.iter().copied();
    for (&src, slot) in selected.iter().zip(open_iter.by_ref()) {
        members[slot] = Some(pop.members[src].clone());
        origins[slot] = SlotOrigin::Selected(src);
    }
    for slot in open_iter {
        let elite = elites[rng.random_range(0..elites.len())];
        let partner = if selected.is_empty() {
            rng.random_range(0..k)
        } else {
            selected[rng.random_range(0..selected.len())]
        };
        let (child, _) = crossover(&pop.members[elite], &pop.members[partner], rng)?;
        members[slot] = Some(child);
        origins[slot] = SlotOrigin::Crossover { elite, partner };
    }
    let mut members: Vec<ParamVector> = members.into_iter().map(|m| m.expect("every slot filled")).collect();

    let mut mutated = vec![false; k];
    for &slot in &open {
        mutated[slot] = mutate(&mut members[slot], cfg, rng)?;
    }

    let mut reinserted = None;
    if let Some(star) = star {
        if cfg.sync_due(pop.generation) {
            let worst = worst_slot(&pop.fitness).expect("non-empty population");
            if !star.same_layout(&members[worst]) {
                return Err(Error::Config("star agent layout differs from the population".into()));
            }
            members[worst] = star.clone();
            origins[worst] = SlotOrigin::Star;
            reinserted = Some(worst);
        }
    }

    let report = GenerationReport {
        fitness: pop.fitness.clone(),
        elites,
        draws,
        selected,
        origins,
        mutated,
        reinserted,
    };
    Ok((
        Population {
            members,
            fitness: vec![f64::NAN; k],
            generation: pop.generation + 1,
        },
        report,
    ))
}

/// A member's fitness and the trajectories it was measured on.
pub type Evaluation<S> = (f64, Vec<Trajectory<S>>);

/// Samples `episodes` on-policy trajectories; fitness is their mean reward.
pub fn evaluate_member<E: Environment, R: Rng + ?Sized>(
    agent: &GfnAgent,
    env: &E,
    episodes: usize,
    rng: &mut R,
) -> Result<Evaluation<E::State>> {
    if episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let trajs = sample_trajectories(agent, env, episodes, rng, 0.0)?;
    let fitness = trajs.iter().map(|t| t.reward).sum::<f64>() / episodes as f64;
    Ok((fitness, trajs))
}

/// Evaluates every member on its own `(seed, generation, index)` stream and
/// fills `pop.fitness`. Trajectories come back in member order, so results do
/// not depend on the pool size.
pub fn evaluate_population<E: Environment>(
    pop: &mut Population,
    template: &GfnAgent,
    env: &E,
    episodes: usize,
    seed: u64,
    pool: Option<&rayon::ThreadPool>,
) -> Result<Vec<Vec<Trajectory<E::State>>>> {
    let generation = pop.generation;
    let run = |(i, member): (usize, &ParamVector)| {
        let agent = template.with_params(member.clone());
        let mut rng = stream(seed, purpose::EVALUATION, generation, i as u64);
        evaluate_member(&agent, env, episodes, &mut rng)
    };
    let results: Vec<Result<Evaluation<E::State>>> = match pool {
        Some(pool) => pool.install(|| pop.members.par_iter().enumerate().map(run).collect()),
        None => pop.members.iter().enumerate().map(run).collect(),
    };
    let mut out = Vec::with_capacity(results.len());
    for (i, res) in results.into_iter().enumerate() {
        let (fitness, trajs) = res?;
        pop.fitness[i] = fitness;
        out.push(trajs);
    }
    Ok(out)
}
