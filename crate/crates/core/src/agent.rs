//! GFlowNet agents over a single MLP, trajectory sampling and log-probabilities.
//!
//! Output layout per objective, with `A` the number of actions:
//! - FM: `A` log edge flows.
//! - DB: `A` forward logits, `A` backward logits, one log state-flow.
//! - TB: `A` forward logits, `A` backward logits; `log_z` is a separate scalar.
//!
//! Backward logits are indexed by the action of the incoming edge, so the two
//! edges of a sequence state like `AA` (prepend `A`, append `A`) get distinct
//! probabilities even though they share a parent.

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::Environment;
use crate::numnet::{MlpSpec, ParamVector};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    Fm,
    Db,
    Tb,
}

impl ObjectiveKind {
    pub fn output_dim(self, num_actions: usize) -> usize {
        match self {
            ObjectiveKind::Fm => num_actions,
            ObjectiveKind::Db => 2 * num_actions + 1,
            ObjectiveKind::Tb => 2 * num_actions,
        }
    }

    pub fn default_lr(self) -> f64 {
        match self {
            ObjectiveKind::Fm => 1e-4,
            ObjectiveKind::Db | ObjectiveKind::Tb => 1e-3,
        }
    }
}

impl std::fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ObjectiveKind::Fm => "fm",
            ObjectiveKind::Db => "db",
            ObjectiveKind::Tb => "tb",
        })
    }
}

impl std::str::FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fm" => Ok(ObjectiveKind::Fm),
            "db" => Ok(ObjectiveKind::Db),
            "tb" => Ok(ObjectiveKind::Tb),
            other => Err(Error::Config(format!("unknown objective {other:?}"))),
        }
    }
}

/// `log(sum(exp(x)))` over finite-or-`-inf` values; `-inf` for an empty input.
pub fn log_sum_exp<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Log-softmax restricted to `mask`; masked entries get `-inf`.
pub fn masked_log_softmax(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    let lse = log_sum_exp(
        logits
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&l, _)| l),
    );
    logits
        .iter()
        .zip(mask)
        .map(|(&l, &m)| if m { l - lse } else { f64::NEG_INFINITY })
        .collect()
}

/// Sampled or replayed path from the initial state to a terminal node.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S> {
    /// `actions.len() + 1` states; the last one is terminal.
    pub states: Vec<S>,
    pub actions: Vec<usize>,
    pub reward: f64,
    /// Policy log-probability accumulated while sampling (0 for replayed paths).
    pub log_pf: f64,
}

impl<S> Trajectory<S> {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn terminal(&self) -> &S {
        self.states.last().expect("trajectory has at least one state")
    }

    /// Consecutive `(state, action, next_state)` triples.
    pub fn transitions(&self) -> impl Iterator<Item = (&S, usize, &S)> {
        self.states
            .windows(2)
            .zip(&self.actions)
            .map(|(w, &a)| (&w[0], a, &w[1]))
    }
}

/// Per-trajectory log-probability sums and their per-step terms.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajLogProbs {
    pub sum_log_pf: f64,
    pub sum_log_pb: f64,
    pub step_log_pf: Vec<f64>,
    pub step_log_pb: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GfnAgent {
    pub kind: ObjectiveKind,
    pub spec: MlpSpec,
    pub params: ParamVector,
    pub log_z: f64,
    /// Use `1/|parents|` instead of the learned backward head.
    pub uniform_pb: bool,
}

impl GfnAgent {
    /// Freshly initialized agent sized for `env`.
    pub fn init<E: Environment, R: Rng + ?Sized>(
        kind: ObjectiveKind,
        env: &E,
        hidden_dims: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let spec = Self::spec_for(kind, env, hidden_dims)?;
        let params = spec.init_params(rng);
        Ok(Self {
            kind,
            spec,
            params,
            log_z: 0.0,
            uniform_pb: false,
        })
    }

    pub fn spec_for<E: Environment>(kind: ObjectiveKind, env: &E, hidden_dims: &[usize]) -> Result<MlpSpec> {
        MlpSpec::new(
            env.encoding_dim(),
            hidden_dims.to_vec(),
            kind.output_dim(env.num_actions()),
        )
    }

    pub fn with_params(&self, params: ParamVector) -> Self {
        Self {
            params,
            ..self.clone()
        }
    }

    /// Network outputs for a batch of states, one row each.
    pub fn outputs<E: Environment>(&self, env: &E, states: &[E::State]) -> Result<Array2<f64>> {
        let inputs = encode_batch(env, states);
        self.spec.forward_batch(&self.params, inputs.view())
    }

    /// Probabilities over all actions; masked entries are exactly zero.
    pub fn forward_dist<E: Environment>(&self, env: &E, s: &E::State) -> Result<Vec<f64>> {
        let out = self.outputs(env, std::slice::from_ref(s))?;
        let mask = env.allowed_actions(s)?;
        Ok(forward_log_probs(out.row(0), &mask)
            .into_iter()
            .map(f64::exp)
            .collect())
    }

    /// Probabilities over the parent edges of `s`, in `env.parents(s)` order.
    pub fn backward_dist<E: Environment>(&self, env: &E, s: &E::State) -> Result<Vec<f64>> {
        let parents = env.parents(s);
        if parents.is_empty() {
            return Err(Error::Usage("backward distribution of the initial state".into()));
        }
        Ok(self
            .backward_log_probs(env, s, &parents)?
            .into_iter()
            .map(f64::exp)
            .collect())
    }

    fn backward_log_probs<E: Environment>(
        &self,
        env: &E,
        s: &E::State,
        parents: &[(E::State, usize)],
    ) -> Result<Vec<f64>> {
        if self.uniform_pb {
            let lp = -(parents.len() as f64).ln();
            return Ok(vec![lp; parents.len()]);
        }
        if parents.len() == 1 {
            return Ok(vec![0.0]);
        }
        let scores: Vec<f64> = match self.kind {
            ObjectiveKind::Fm => {
                let ps: Vec<E::State> = parents.iter().map(|(p, _)| p.clone()).collect();
                let out = self.outputs(env, &ps)?;
                parents
                    .iter()
                    .enumerate()
                    .map(|(i, (_, a))| out[[i, *a]])
                    .collect()
            }
            ObjectiveKind::Db | ObjectiveKind::Tb => {
                let out = self.outputs(env, std::slice::from_ref(s))?;
                let a_count = env.num_actions();
                parents.iter().map(|(_, a)| out[[0, a_count + a]]).collect()
            }
        };
        let lse = log_sum_exp(scores.iter().copied());
        Ok(scores.into_iter().map(|x| x - lse).collect())
    }

    /// Exact log-probabilities of a (possibly foreign) trajectory.
    pub fn traj_logprobs<E: Environment>(&self, env: &E, tau: &Trajectory<E::State>) -> Result<TrajLogProbs> {
        validate_trajectory(env, tau)?;
        let out = self.outputs(env, &tau.states)?;
        let mut step_log_pf = Vec::with_capacity(tau.len());
        let mut step_log_pb = Vec::with_capacity(tau.len());
        for (t, (s, a, next)) in tau.transitions().enumerate() {
            let mask = env.allowed_actions(s)?;
            step_log_pf.push(forward_log_probs(out.row(t), &mask)[a]);
            let parents = env.parents(next);
            let edge = parents
                .iter()
                .position(|(p, pa)| p == s && *pa == a)
                .ok_or_else(|| Error::Data(format!("step {t}: edge missing from parent list")))?;
            step_log_pb.push(self.backward_log_probs(env, next, &parents)?[edge]);
        }
        Ok(TrajLogProbs {
            sum_log_pf: step_log_pf.iter().sum(),
            sum_log_pb: step_log_pb.iter().sum(),
            step_log_pf,
            step_log_pb,
        })
    }
}

/// Masked log-softmax of the forward block of an output row.
pub fn forward_log_probs(row: ArrayView1<f64>, mask: &[bool]) -> Vec<f64> {
    let logits: Vec<f64> = row.iter().take(mask.len()).copied().collect();
    masked_log_softmax(&logits, mask)
}

pub fn encode_batch<E: Environment>(env: &E, states: &[E::State]) -> Array2<f64> {
    let dim = env.encoding_dim();
    let mut inputs = Array2::zeros((states.len(), dim));
    for (mut row, s) in inputs.rows_mut().into_iter().zip(states) {
        env.encode_into(s, row.as_slice_mut().expect("standard layout"));
    }
    inputs
}

/// Checks that `tau` replays under `env` from the initial state to a terminal node.
pub fn validate_trajectory<E: Environment>(env: &E, tau: &Trajectory<E::State>) -> Result<()> {
    if tau.states.len() != tau.actions.len() + 1 {
        return Err(Error::Data(format!(
            "trajectory has {} states for {} actions",
            tau.states.len(),
            tau.actions.len()
        )));
    }
    if tau.states[0] != env.initial_state() {
        return Err(Error::Data("trajectory does not start at the initial state".into()));
    }
    for (t, (s, a, next)) in tau.transitions().enumerate() {
        if env.is_terminal(s) {
            return Err(Error::Data(format!("step {t}: leaves a terminal state")));
        }
        match env.step(s, a) {
            Ok(ref n) if n == next => {}
            Ok(_) => return Err(Error::Data(format!("step {t}: action {a} does not reach the recorded state"))),
            Err(e) => return Err(Error::Data(format!("step {t}: {e}"))),
        }
    }
    if !env.is_terminal(tau.terminal()) {
        return Err(Error::Data("trajectory does not end in a terminal state".into()));
    }
    Ok(())
}

/// Samples `n` trajectories in lockstep so each step is one batched forward pass.
///
/// With probability `explore_eps` an action is drawn uniformly from the
/// allowed set; `log_pf` always accumulates the policy's own log-probability.
pub fn sample_trajectories<E: Environment, R: Rng + ?Sized>(
    agent: &GfnAgent,
    env: &E,
    n: usize,
    rng: &mut R,
    explore_eps: f64,
) -> Result<Vec<Trajectory<E::State>>> {
    if !(0.0..=1.0).contains(&explore_eps) {
        return Err(Error::Config(format!("explore_eps must be in [0, 1], got {explore_eps}")));
    }
    let s0 = env.initial_state();
    let mut trajs: Vec<Trajectory<E::State>> = (0..n)
        .map(|_| Trajectory {
            states: vec![s0.clone()],
            actions: Vec::new(),
            reward: 0.0,
            log_pf: 0.0,
        })
        .collect();
    let bound = env.max_trajectory_len();
    let mut active: Vec<usize> = (0..n).filter(|_| !env.is_terminal(&s0)).collect();
    while !active.is_empty() {
        let current: Vec<E::State> = active
            .iter()
            .map(|&i| trajs[i].terminal().clone())
            .collect();
        let out = agent.outputs(env, &current)?;
        for (row, &i) in active.iter().enumerate() {
            let s = &current[row];
            let mask = env.allowed_actions(s)?;
            let logp = forward_log_probs(out.row(row), &mask);
            let action = if explore_eps > 0.0 && rng.random::<f64>() < explore_eps {
                let allowed: Vec<usize> = (0..mask.len()).filter(|&a| mask[a]).collect();
                allowed[rng.random_range(0..allowed.len())]
            } else {
                draw_categorical(&logp, rng)
            };
            let next = env.step(s, action)?;
            let tau = &mut trajs[i];
            tau.log_pf += logp[action];
            tau.actions.push(action);
            tau.states.push(next);
            if tau.actions.len() > bound {
                return Err(Error::Internal(format!(
                    "trajectory exceeded the length bound {bound}"
                )));
            }
        }
        active.retain(|&i| !env.is_terminal(trajs[i].terminal()));
    }
    for tau in &mut trajs {
        tau.reward = env.reward(tau.terminal())?;
    }
    Ok(trajs)
}

pub fn sample_trajectory<E: Environment, R: Rng + ?Sized>(
    agent: &GfnAgent,
    env: &E,
    rng: &mut R,
    explore_eps: f64,
) -> Result<Trajectory<E::State>> {
    Ok(sample_trajectories(agent, env, 1, rng, explore_eps)?.remove(0))
}

fn draw_categorical<R: Rng + ?Sized>(log_probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (a, &lp) in log_probs.iter().enumerate() {
        if lp == f64::NEG_INFINITY {
            continue;
        }
        acc += lp.exp();
        last = a;
        if u < acc {
            return a;
        }
    }
    last
}
