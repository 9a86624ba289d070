//! Flow-matching, detailed-balance and trajectory-balance losses.
//!
//! Each objective is written once against [`HeadOutputs`], a table of head
//! outputs keyed by state plus a same-shaped gradient accumulator. The agent
//! wrappers fill the table with one batched forward pass and push the
//! accumulated gradient back through the network; tests can fill the same
//! table with exact flows instead.
//!
//! Terminal convention: a terminal node's out-flow is `R(x)`, and the state
//! flow of a terminal node in DB is replaced by `R(x)`.

use std::collections::HashMap;
use std::hash::Hash;

use log::warn;
use ndarray::Array2;

use crate::agent::{encode_batch, log_sum_exp, GfnAgent, ObjectiveKind, Trajectory};
use crate::envs::Environment;
use crate::numnet::ParamVector;
use crate::{Error, Result};

/// Lower clamp on rewards before taking logs.
pub const REWARD_LOG_FLOOR: f64 = 1e-30;

fn log_reward(r: f64) -> f64 {
    r.max(REWARD_LOG_FLOOR).ln()
}

/// Head outputs for a set of states, with a gradient accumulator of equal shape.
#[derive(Debug, Clone)]
pub struct HeadOutputs<S> {
    index: HashMap<S, usize>,
    pub outputs: Array2<f64>,
    pub grad: Array2<f64>,
    num_actions: usize,
}

/// `(row, column, d value / d output)` entries of one head-output derivative.
type Partials = Vec<(usize, usize, f64)>;

impl<S: Clone + Eq + Hash + std::fmt::Debug> HeadOutputs<S> {
    /// `outputs` row `i` belongs to `states[i]`.
    pub fn new(states: Vec<S>, outputs: Array2<f64>, num_actions: usize) -> Result<Self> {
        if states.len() != outputs.nrows() {
            return Err(Error::Config(format!(
                "{} states for {} output rows",
                states.len(),
                outputs.nrows()
            )));
        }
        let grad = Array2::zeros(outputs.raw_dim());
        let index = states.into_iter().enumerate().map(|(i, s)| (s, i)).collect();
        Ok(Self {
            index,
            outputs,
            grad,
            num_actions,
        })
    }

    pub fn row(&self, s: &S) -> Result<usize> {
        self.index
            .get(s)
            .copied()
            .ok_or_else(|| Error::Internal(format!("no head outputs for state {s:?}")))
    }

    fn apply(&mut self, partials: &[(usize, usize, f64)], coef: f64) {
        for &(r, c, d) in partials {
            self.grad[[r, c]] += coef * d;
        }
    }

    fn forward_logp(&self, mask: &[bool], s: &S, action: usize) -> Result<(f64, Partials)> {
        let r = self.row(s)?;
        let allowed: Vec<usize> = (0..mask.len()).filter(|&a| mask[a]).collect();
        if !mask.get(action).copied().unwrap_or(false) {
            return Err(Error::Data(format!("action {action} is masked at {s:?}")));
        }
        let lse = log_sum_exp(allowed.iter().map(|&a| self.outputs[[r, a]]));
        let mut partials: Vec<_> = allowed
            .iter()
            .map(|&a| (r, a, -(self.outputs[[r, a]] - lse).exp()))
            .collect();
        partials.push((r, action, 1.0));
        Ok((self.outputs[[r, action]] - lse, partials))
    }

    /// Log-probability of reaching `child` from the parent edge `edge`.
    fn backward_logp(
        &self,
        parents: &[(S, usize)],
        edge: usize,
        child: &S,
        uniform: bool,
    ) -> Result<(f64, Partials)> {
        if uniform {
            return Ok((-(parents.len() as f64).ln(), Vec::new()));
        }
        if parents.len() == 1 {
            return Ok((0.0, Vec::new()));
        }
        let r = self.row(child)?;
        let cols: Vec<usize> = parents.iter().map(|(_, a)| self.num_actions + a).collect();
        let lse = log_sum_exp(cols.iter().map(|&c| self.outputs[[r, c]]));
        let mut partials: Vec<_> = cols
            .iter()
            .map(|&c| (r, c, -(self.outputs[[r, c]] - lse).exp()))
            .collect();
        partials.push((r, cols[edge], 1.0));
        Ok((self.outputs[[r, cols[edge]]] - lse, partials))
    }
}

/// One DAG edge for detailed balance.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition<S> {
    pub from: S,
    pub action: usize,
    pub to: S,
    /// Reward of `to` when it is terminal.
    pub terminal_reward: Option<f64>,
}

impl<S: Clone> Transition<S> {
    pub fn from_trajectory<E: Environment<State = S>>(env: &E, tau: &Trajectory<S>) -> Vec<Self> {
        tau.transitions()
            .map(|(s, a, next)| Transition {
                from: s.clone(),
                action: a,
                to: next.clone(),
                terminal_reward: env.is_terminal(next).then_some(tau.reward),
            })
            .collect()
    }
}

/// Flow-matching residuals at `nodes`; returns per-node losses. Gradients of
/// `scale * sum(losses)` are added to `heads.grad`. Root nodes are skipped.
pub fn fm_terms<E: Environment>(
    env: &E,
    heads: &mut HeadOutputs<E::State>,
    nodes: &[E::State],
    scale: f64,
) -> Result<Vec<f64>> {
    let mut losses = Vec::with_capacity(nodes.len());
    for s in nodes {
        let parents = env.parents(s);
        if parents.is_empty() {
            warn!("flow matching skipped a root state");
            continue;
        }
        let in_vals: Vec<(usize, usize)> = parents
            .iter()
            .map(|(p, a)| heads.row(p).map(|r| (r, *a)))
            .collect::<Result<_>>()?;
        let inflow = log_sum_exp(in_vals.iter().map(|&(r, a)| heads.outputs[[r, a]]));
        let mut partials: Vec<(usize, usize, f64)> = in_vals
            .iter()
            .map(|&(r, a)| (r, a, (heads.outputs[[r, a]] - inflow).exp()))
            .collect();
        let outflow = if env.is_terminal(s) {
            log_reward(env.reward(s)?)
        } else {
            let r = heads.row(s)?;
            let mask = env.allowed_actions(s)?;
            let allowed: Vec<usize> = (0..mask.len()).filter(|&a| mask[a]).collect();
            let out = log_sum_exp(allowed.iter().map(|&a| heads.outputs[[r, a]]));
            partials.extend(
                allowed
                    .iter()
                    .map(|&a| (r, a, -(heads.outputs[[r, a]] - out).exp())),
            );
            out
        };
        let delta = inflow - outflow;
        heads.apply(&partials, 2.0 * delta * scale);
        losses.push(delta * delta);
    }
    Ok(losses)
}

/// Detailed-balance residuals on `edges`.
pub fn db_terms<E: Environment>(
    env: &E,
    heads: &mut HeadOutputs<E::State>,
    edges: &[Transition<E::State>],
    uniform_pb: bool,
    scale: f64,
) -> Result<Vec<f64>> {
    let flow_col = 2 * heads.num_actions;
    let mut losses = Vec::with_capacity(edges.len());
    for (i, e) in edges.iter().enumerate() {
        match env.step(&e.from, e.action) {
            Ok(ref next) if *next == e.to => {}
            _ => return Err(Error::Data(format!("edge {i} is not in the environment graph"))),
        }
        let mask = env.allowed_actions(&e.from)?;
        let r_from = heads.row(&e.from)?;
        let (lpf, mut partials) = heads.forward_logp(&mask, &e.from, e.action)?;
        partials.push((r_from, flow_col, 1.0));
        let lhs = heads.outputs[[r_from, flow_col]] + lpf;

        let parents = env.parents(&e.to);
        let edge = parents
            .iter()
            .position(|(p, a)| *p == e.from && *a == e.action)
            .ok_or_else(|| Error::Data(format!("edge {i} missing from the parent list")))?;
        let (lpb, pb_partials) = heads.backward_logp(&parents, edge, &e.to, uniform_pb)?;
        let to_flow = if env.is_terminal(&e.to) {
            let r = match e.terminal_reward {
                Some(r) => r,
                None => env.reward(&e.to)?,
            };
            log_reward(r)
        } else {
            let r_to = heads.row(&e.to)?;
            partials.push((r_to, flow_col, -1.0));
            heads.outputs[[r_to, flow_col]]
        };
        partials.extend(pb_partials.into_iter().map(|(r, c, d)| (r, c, -d)));
        let delta = lhs - (to_flow + lpb);
        heads.apply(&partials, 2.0 * delta * scale);
        losses.push(delta * delta);
    }
    Ok(losses)
}

/// Trajectory-balance residuals; returns per-trajectory losses and the
/// gradient with respect to `log_z` of `scale * sum(losses)`.
pub fn tb_terms<E: Environment>(
    env: &E,
    heads: &mut HeadOutputs<E::State>,
    trajs: &[&Trajectory<E::State>],
    log_z: f64,
    uniform_pb: bool,
    scale: f64,
) -> Result<(Vec<f64>, f64)> {
    let mut losses = Vec::with_capacity(trajs.len());
    let mut grad_log_z = 0.0;
    for (i, tau) in trajs.iter().enumerate() {
        if !(tau.reward > 0.0) {
            return Err(Error::Data(format!(
                "trajectory {i} has non-positive reward {}",
                tau.reward
            )));
        }
        let mut partials = Vec::new();
        let mut sum_pf = 0.0;
        let mut sum_pb = 0.0;
        for (s, a, next) in tau.transitions() {
            let mask = env.allowed_actions(s)?;
            let (lpf, p) = heads.forward_logp(&mask, s, a)?;
            sum_pf += lpf;
            partials.extend(p);
            let parents = env.parents(next);
            let edge = parents
                .iter()
                .position(|(p, pa)| p == s && *pa == a)
                .ok_or_else(|| Error::Data(format!("trajectory {i}: edge missing from parent list")))?;
            let (lpb, p) = heads.backward_logp(&parents, edge, next, uniform_pb)?;
            sum_pb += lpb;
            partials.extend(p.into_iter().map(|(r, c, d)| (r, c, -d)));
        }
        let delta = log_z + sum_pf - tau.reward.ln() - sum_pb;
        heads.apply(&partials, 2.0 * delta * scale);
        grad_log_z += 2.0 * delta * scale;
        losses.push(delta * delta);
    }
    Ok((losses, grad_log_z))
}

/// Loss value, per-item terms and gradients for one batch.
#[derive(Debug, Clone)]
pub struct LossBatchReport {
    pub mean_loss: f64,
    pub losses: Vec<f64>,
    pub grad: ParamVector,
    /// Zero except for TB.
    pub grad_log_z: f64,
    /// `log_z` for TB, mean predicted log state-flow for DB, mean log in-flow for FM.
    pub aux: f64,
}

struct Evaluated<S> {
    heads: HeadOutputs<S>,
    cache: crate::numnet::ForwardCache,
}

fn evaluate<E: Environment>(
    agent: &GfnAgent,
    env: &E,
    states: impl IntoIterator<Item = E::State>,
) -> Result<Evaluated<E::State>> {
    let mut seen = HashMap::new();
    let mut unique = Vec::new();
    for s in states {
        if !seen.contains_key(&s) {
            seen.insert(s.clone(), unique.len());
            unique.push(s);
        }
    }
    let inputs = encode_batch(env, &unique);
    let (outputs, cache) = agent.spec.forward_cached(&agent.params, inputs)?;
    Ok(Evaluated {
        heads: HeadOutputs::new(unique, outputs, env.num_actions())?,
        cache,
    })
}

fn finish<S>(
    agent: &GfnAgent,
    ev: Evaluated<S>,
    losses: Vec<f64>,
    grad_log_z: f64,
    aux: f64,
) -> Result<LossBatchReport> {
    let grad = agent.spec.backward(&agent.params, &ev.cache, ev.heads.grad.view())?;
    let mean_loss = losses.iter().sum::<f64>() / losses.len() as f64;
    Ok(LossBatchReport {
        mean_loss,
        losses,
        grad,
        grad_log_z,
        aux,
    })
}

fn expect_kind(agent: &GfnAgent, kind: ObjectiveKind) -> Result<()> {
    if agent.kind != kind {
        return Err(Error::Usage(format!("{kind} loss on a {} agent", agent.kind)));
    }
    Ok(())
}

pub fn fm_loss<E: Environment>(agent: &GfnAgent, env: &E, nodes: &[E::State]) -> Result<LossBatchReport> {
    expect_kind(agent, ObjectiveKind::Fm)?;
    let nodes: Vec<E::State> = nodes
        .iter()
        .filter(|s| {
            let root = env.parents(s).is_empty();
            if root {
                warn!("flow matching skipped a root state");
            }
            !root
        })
        .cloned()
        .collect();
    if nodes.is_empty() {
        return Err(Error::Usage("empty flow-matching batch".into()));
    }
    let needed = nodes
        .iter()
        .flat_map(|s| {
            env.parents(s)
                .into_iter()
                .map(|(p, _)| p)
                .chain(std::iter::once(s.clone()))
        })
        .collect::<Vec<_>>();
    let mut ev = evaluate(agent, env, needed)?;
    let scale = 1.0 / nodes.len() as f64;
    let losses = fm_terms(env, &mut ev.heads, &nodes, scale)?;
    let mut inflow = 0.0;
    for s in &nodes {
        let vals = env
            .parents(s)
            .iter()
            .map(|(p, a)| ev.heads.row(p).map(|r| ev.heads.outputs[[r, *a]]))
            .collect::<Result<Vec<_>>>()?;
        inflow += log_sum_exp(vals);
    }
    finish(agent, ev, losses, 0.0, inflow * scale)
}

pub fn db_loss<E: Environment>(
    agent: &GfnAgent,
    env: &E,
    edges: &[Transition<E::State>],
) -> Result<LossBatchReport> {
    expect_kind(agent, ObjectiveKind::Db)?;
    if edges.is_empty() {
        return Err(Error::Usage("empty detailed-balance batch".into()));
    }
    let mut ev = evaluate(
        agent,
        env,
        edges.iter().flat_map(|e| [e.from.clone(), e.to.clone()]),
    )?;
    let scale = 1.0 / edges.len() as f64;
    let losses = db_terms(env, &mut ev.heads, edges, agent.uniform_pb, scale)?;
    let flow_col = 2 * env.num_actions();
    let mut flow = 0.0;
    for e in edges {
        flow += ev.heads.outputs[[ev.heads.row(&e.from)?, flow_col]];
    }
    finish(agent, ev, losses, 0.0, flow * scale)
}

pub fn tb_loss<E: Environment>(
    agent: &GfnAgent,
    env: &E,
    trajs: &[Trajectory<E::State>],
) -> Result<LossBatchReport> {
    expect_kind(agent, ObjectiveKind::Tb)?;
    if trajs.is_empty() {
        return Err(Error::Usage("empty trajectory-balance batch".into()));
    }
    let mut ev = evaluate(agent, env, trajs.iter().flat_map(|t| t.states.iter().cloned()))?;
    let refs: Vec<&Trajectory<E::State>> = trajs.iter().collect();
    let scale = 1.0 / trajs.len() as f64;
    let (losses, grad_log_z) = tb_terms(env, &mut ev.heads, &refs, agent.log_z, agent.uniform_pb, scale)?;
    finish(agent, ev, losses, grad_log_z, agent.log_z)
}

/// Dispatches on the agent's objective: FM uses every non-root state of the
/// batch, DB every transition, TB whole trajectories.
pub fn batch_loss<E: Environment>(
    agent: &GfnAgent,
    env: &E,
    trajs: &[Trajectory<E::State>],
) -> Result<LossBatchReport> {
    match agent.kind {
        ObjectiveKind::Fm => {
            let nodes: Vec<E::State> = trajs
                .iter()
                .flat_map(|t| t.states.iter().skip(1).cloned())
                .collect();
            fm_loss(agent, env, &nodes)
        }
        ObjectiveKind::Db => {
            let edges: Vec<_> = trajs
                .iter()
                .flat_map(|t| Transition::from_trajectory(env, t))
                .collect();
            db_loss(agent, env, &edges)
        }
        ObjectiveKind::Tb => tb_loss(agent, env, trajs),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::sample_trajectories;
    use crate::envs::{GridState, HypergridEnv};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid_1x2() -> HypergridEnv {
        HypergridEnv::with_r0(1, 2, 0.1).unwrap()
    }

    #[test]
    fn db_single_edge_balance() {
        let env = grid_1x2();
        let s = GridState::new(vec![1]);
        let x = GridState::terminal(vec![1]);
        let r = env.reward(&x).unwrap();
        // Columns: forward (inc, stop), backward (inc, stop), log-flow.
        let mut outputs = Array2::zeros((2, 5));
        outputs[[0, 4]] = r.ln();
        let edge = Transition {
            from: s.clone(),
            action: 1,
            to: x.clone(),
            terminal_reward: Some(r),
        };
        let mut heads = HeadOutputs::new(vec![s.clone(), x.clone()], outputs.clone(), 2).unwrap();
        let l = db_terms(&env, &mut heads, std::slice::from_ref(&edge), false, 1.0).unwrap();
        assert!(l[0] < 1e-30);

        outputs[[0, 4]] = r.ln() + 1.0;
        let mut heads = HeadOutputs::new(vec![s, x], outputs, 2).unwrap();
        let l = db_terms(&env, &mut heads, &[edge], false, 1.0).unwrap();
        assert!((l[0] - 1.0).abs() < 1e-12);
        assert!((heads.grad[[0, 4]] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn tb_chain_balance_and_log_z_gradient() {
        let env = grid_1x2();
        let tau = Trajectory {
            states: vec![GridState::new(vec![0]), GridState::new(vec![1]), GridState::terminal(vec![1])],
            actions: vec![0, 1],
            reward: env.reward(&GridState::terminal(vec![1])).unwrap(),
            log_pf: 0.0,
        };
        // P_F(inc | s0) = 1 via a huge logit gap; P_F(stop | (1)) = 1 by the mask.
        let mut outputs = Array2::zeros((3, 4));
        outputs[[0, 1]] = -800.0;
        let states = tau.states.clone();
        let mut heads = HeadOutputs::new(states.clone(), outputs.clone(), 2).unwrap();
        let (l, _) = tb_terms(&env, &mut heads, &[&tau], tau.reward.ln(), false, 1.0).unwrap();
        assert!(l[0] < 1e-24);
        let mut heads = HeadOutputs::new(states, outputs, 2).unwrap();
        let (l, gz) = tb_terms(&env, &mut heads, &[&tau], tau.reward.ln() + 1.0, false, 1.0).unwrap();
        assert!((l[0] - 1.0).abs() < 1e-12);
        assert!((gz - 2.0).abs() < 1e-12);
    }

    #[test]
    fn tb_two_terminal_optimum() {
        let env = HypergridEnv::new(1, 2, 0.3, 0.5, 2.0).unwrap();
        let r0 = env.reward(&GridState::terminal(vec![0])).unwrap();
        let r1 = env.reward(&GridState::terminal(vec![1])).unwrap();
        let z = r0 + r1;
        let s0 = GridState::new(vec![0]);
        let s1 = GridState::new(vec![1]);
        let mut outputs = Array2::zeros((2, 4));
        outputs[[0, 0]] = (r1 / z).ln();
        outputs[[0, 1]] = (r0 / z).ln();
        let heads_states = vec![s0.clone(), s1.clone()];
        let stop = Trajectory {
            states: vec![s0.clone(), GridState::terminal(vec![0])],
            actions: vec![1],
            reward: r0,
            log_pf: 0.0,
        };
        let inc = Trajectory {
            states: vec![s0, s1, GridState::terminal(vec![1])],
            actions: vec![0, 1],
            reward: r1,
            log_pf: 0.0,
        };
        let mut all = heads_states.clone();
        all.extend([GridState::terminal(vec![0]), GridState::terminal(vec![1])]);
        let mut out4 = Array2::zeros((4, 4));
        out4.slice_mut(ndarray::s![0..2, ..]).assign(&outputs);
        let mut heads = HeadOutputs::new(all, out4, 2).unwrap();
        let (l, _) = tb_terms(&env, &mut heads, &[&stop, &inc], z.ln(), false, 1.0).unwrap();
        assert!(l.iter().all(|&x| x < 1e-24), "{l:?}");
    }

    #[test]
    fn fm_unit_flows_give_log_count_ratio() {
        let env = HypergridEnv::with_r0(2, 4, 0.1).unwrap();
        let states: Vec<GridState> = env.enumerate_states(u128::MAX).unwrap();
        let outputs = Array2::zeros((states.len(), 3));
        let mut heads = HeadOutputs::new(states, outputs, 3).unwrap();
        // (1,1): 2 parents, 3 children (two increments plus stop).
        let l = fm_terms(&env, &mut heads, &[GridState::new(vec![1, 1])], 1.0).unwrap();
        let want = (2f64.ln() - 3f64.ln()).powi(2);
        assert!((l[0] - want).abs() < 1e-14);
    }

    #[test]
    fn fm_ratio_invariance() {
        let env = HypergridEnv::with_r0(2, 4, 0.1).unwrap();
        let states: Vec<GridState> = env.enumerate_states(u128::MAX).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        use rand::Rng;
        let outputs = Array2::from_shape_fn((states.len(), 3), |_| rng.random_range(-2.0..2.0));
        let node = GridState::new(vec![1, 2]);
        let mut a = HeadOutputs::new(states.clone(), outputs.clone(), 3).unwrap();
        let mut b = HeadOutputs::new(states, outputs + 2f64.ln(), 3).unwrap();
        let la = fm_terms(&env, &mut a, std::slice::from_ref(&node), 1.0).unwrap();
        let lb = fm_terms(&env, &mut b, &[node], 1.0).unwrap();
        assert!((la[0] - lb[0]).abs() < 1e-12);
    }

    #[test]
    fn wrong_kind_and_bad_reward_are_rejected() {
        let env = HypergridEnv::with_r0(2, 3, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let agent = GfnAgent::init(ObjectiveKind::Tb, &env, &[8], &mut rng).unwrap();
        let mut trajs = sample_trajectories(&agent, &env, 2, &mut rng, 0.0).unwrap();
        assert!(matches!(fm_loss(&agent, &env, &[]), Err(Error::Usage(_))));
        trajs[0].reward = 0.0;
        assert!(matches!(tb_loss(&agent, &env, &trajs), Err(Error::Data(_))));
    }

    #[test]
    fn db_rejects_foreign_edge() {
        let env = HypergridEnv::with_r0(2, 3, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let agent = GfnAgent::init(ObjectiveKind::Db, &env, &[8], &mut rng).unwrap();
        let edge = Transition {
            from: GridState::new(vec![0, 0]),
            action: 0,
            to: GridState::new(vec![0, 1]),
            terminal_reward: None,
        };
        assert!(matches!(db_loss(&agent, &env, &[edge]), Err(Error::Data(_))));
    }

    fn fd_check(kind: ObjectiveKind, seed: u64) {
        let env = HypergridEnv::with_r0(2, 3, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut agent = GfnAgent::init(kind, &env, &[6, 5], &mut rng).unwrap();
        agent.log_z = 0.7;
        let trajs = sample_trajectories(&agent, &env, 4, &mut rng, 0.3).unwrap();
        let report = batch_loss(&agent, &env, &trajs).unwrap();
        let h = 1e-5;
        for i in 0..agent.params.len() {
            let mut plus = agent.clone();
            plus.params.values_mut()[i] += h;
            let mut minus = agent.clone();
            minus.params.values_mut()[i] -= h;
            let fd = (batch_loss(&plus, &env, &trajs).unwrap().mean_loss
                - batch_loss(&minus, &env, &trajs).unwrap().mean_loss)
                / (2.0 * h);
            let an = report.grad.values()[i];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            assert!(rel < 1e-4, "{kind} coord {i}: fd {fd} analytic {an}");
        }
        if kind == ObjectiveKind::Tb {
            let mut plus = agent.clone();
            plus.log_z += h;
            let mut minus = agent.clone();
            minus.log_z -= h;
            let fd = (batch_loss(&plus, &env, &trajs).unwrap().mean_loss
                - batch_loss(&minus, &env, &trajs).unwrap().mean_loss)
                / (2.0 * h);
            assert!((fd - report.grad_log_z).abs() / fd.abs().max(1e-6) < 1e-4);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for kind in [ObjectiveKind::Fm, ObjectiveKind::Db, ObjectiveKind::Tb] {
            fd_check(kind, 21);
        }
    }

    #[test]
    fn tb_reward_scale_shift() {
        let env = HypergridEnv::with_r0(2, 3, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let agent = GfnAgent::init(ObjectiveKind::Tb, &env, &[8], &mut rng).unwrap();
        let trajs = sample_trajectories(&agent, &env, 6, &mut rng, 0.0).unwrap();
        let base = tb_loss(&agent, &env, &trajs).unwrap();
        let c: f64 = 7.5;
        let scaled: Vec<_> = trajs
            .iter()
            .map(|t| Trajectory {
                reward: t.reward * c,
                ..t.clone()
            })
            .collect();
        let mut shifted = agent.clone();
        shifted.log_z += c.ln();
        let other = tb_loss(&shifted, &env, &scaled).unwrap();
        for (a, b) in base.losses.iter().zip(&other.losses) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
