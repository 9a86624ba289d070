//! Ground truth by enumeration: target and learned terminal densities,
//! canonical exact flows, l1 error, mode counting and top-K reward tracking.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet, VecDeque};

use ndarray::Array2;

use crate::agent::{encode_batch, forward_log_probs, GfnAgent, ObjectiveKind, Trajectory};
use crate::envs::Environment;
use crate::losses::HeadOutputs;
use crate::{Error, Result};

/// Rows per forward pass when sweeping the whole state space.
const DP_CHUNK: usize = 4096;

/// Probability per terminal, indexed by [`Environment::terminal_index`].
#[derive(Debug, Clone, PartialEq)]
pub struct DensityTable {
    pub probs: Vec<f64>,
    /// Sum of rewards for a target density; 1 for a learned one.
    pub partition: f64,
}

impl DensityTable {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            probs: vec![1.0 / n as f64; n],
            partition: 1.0,
        }
    }
}

/// `R(x) / sum R`.
pub fn true_density<E: Environment>(env: &E, cap: u128) -> Result<DensityTable> {
    let terminals = env.enumerate_terminals(cap)?;
    let rewards = terminals
        .iter()
        .map(|x| env.reward(x))
        .collect::<Result<Vec<f64>>>()?;
    let z: f64 = rewards.iter().sum();
    if !(z > 0.0) {
        return Err(Error::Data("total reward is not positive".into()));
    }
    let mut probs = vec![0.0; terminals.len()];
    for (x, r) in terminals.iter().zip(rewards) {
        probs[env.terminal_index(x)] = r / z;
    }
    Ok(DensityTable { probs, partition: z })
}

/// Terminal marginal of the agent's forward policy, by pushing probability
/// mass through the DAG in topological order.
pub fn exact_learned_density<E: Environment>(agent: &GfnAgent, env: &E, cap: u128) -> Result<DensityTable> {
    let states = env.enumerate_states(cap)?;
    let index: HashMap<&E::State, usize> = states.iter().enumerate().map(|(i, s)| (s, i)).collect();
    let inner: Vec<usize> = (0..states.len()).filter(|&i| !env.is_terminal(&states[i])).collect();
    let mut mass = vec![0.0; states.len()];
    mass[index[&env.initial_state()]] = 1.0;
    for chunk in inner.chunks(DP_CHUNK) {
        let batch: Vec<E::State> = chunk.iter().map(|&i| states[i].clone()).collect();
        let out = agent.spec.forward_batch(&agent.params, encode_batch(env, &batch).view())?;
        for (row, &i) in chunk.iter().enumerate() {
            let s = &states[i];
            let m = mass[i];
            if m == 0.0 {
                continue;
            }
            let mask = env.allowed_actions(s)?;
            let logp = forward_log_probs(out.row(row), &mask);
            for (a, &ok) in mask.iter().enumerate() {
                if ok {
                    let child = env.step(s, a)?;
                    mass[index[&child]] += m * logp[a].exp();
                }
            }
        }
    }
    let mut probs = vec![0.0; env.num_terminals() as usize];
    for (i, s) in states.iter().enumerate() {
        if env.is_terminal(s) {
            probs[env.terminal_index(s)] = mass[i];
        }
    }
    Ok(DensityTable { probs, partition: 1.0 })
}

/// Exact state and edge flows for the reward, with each state's in-flow
/// split equally among its parent edges.
#[derive(Debug, Clone)]
pub struct FlowTable<S> {
    /// Topological order.
    pub states: Vec<S>,
    pub state_flow: HashMap<S, f64>,
    pub edge_flow: HashMap<(S, usize), f64>,
}

impl<S: Clone + Eq + std::hash::Hash> FlowTable<S> {
    pub fn edge(&self, parent: &S, action: usize) -> Option<f64> {
        self.edge_flow.get(&(parent.clone(), action)).copied()
    }

    pub fn state(&self, s: &S) -> Option<f64> {
        self.state_flow.get(s).copied()
    }
}

pub fn exact_edge_flows<E: Environment>(env: &E, cap: u128) -> Result<FlowTable<E::State>> {
    let states = env.enumerate_states(cap)?;
    let mut state_flow: HashMap<E::State, f64> = HashMap::with_capacity(states.len());
    let mut edge_flow: HashMap<(E::State, usize), f64> = HashMap::new();
    for s in states.iter().rev() {
        let f = if env.is_terminal(s) {
            env.reward(s)?
        } else {
            let mask = env.allowed_actions(s)?;
            (0..mask.len())
                .filter(|&a| mask[a])
                .map(|a| edge_flow.get(&(s.clone(), a)).copied().unwrap_or(0.0))
                .sum()
        };
        let parents = env.parents(s);
        let share = f / parents.len().max(1) as f64;
        for (p, a) in parents {
            edge_flow.insert((p, a), share);
        }
        state_flow.insert(s.clone(), f);
    }
    Ok(FlowTable {
        states,
        state_flow,
        edge_flow,
    })
}

/// Head outputs that realize `flows` exactly, plus the matching `log_z`.
///
/// FM rows hold log edge flows. DB and TB rows hold forward logits
/// `log F(s -> s') - log F(s)` and, on parent edges, backward logits
/// `log F(p -> s) - log F(s)`; the DB flow column holds `log F(s)`. Masked
/// entries are zero.
pub fn exact_head_outputs<E: Environment>(
    env: &E,
    kind: ObjectiveKind,
    flows: &FlowTable<E::State>,
) -> Result<(HeadOutputs<E::State>, f64)> {
    let a_count = env.num_actions();
    let mut outputs = Array2::zeros((flows.states.len(), kind.output_dim(a_count)));
    let flow_of = |s: &E::State| {
        flows
            .state(s)
            .ok_or_else(|| Error::Internal(format!("no flow for {s:?}")))
    };
    for (row, s) in flows.states.iter().enumerate() {
        let f = flow_of(s)?;
        if !env.is_terminal(s) {
            let mask = env.allowed_actions(s)?;
            for a in (0..a_count).filter(|&a| mask[a]) {
                let e = flows.edge(s, a).unwrap_or(0.0);
                outputs[[row, a]] = match kind {
                    ObjectiveKind::Fm => e.ln(),
                    ObjectiveKind::Db | ObjectiveKind::Tb => e.ln() - f.ln(),
                };
            }
        }
        if kind != ObjectiveKind::Fm {
            for (p, a) in env.parents(s) {
                let e = flows.edge(&p, a).unwrap_or(0.0);
                outputs[[row, a_count + a]] = e.ln() - f.ln();
            }
        }
        if kind == ObjectiveKind::Db {
            outputs[[row, 2 * a_count]] = f.ln();
        }
    }
    let log_z = flow_of(&env.initial_state())?.ln();
    let heads = HeadOutputs::new(flows.states.clone(), outputs, a_count)?;
    Ok((heads, log_z))
}

/// Every complete trajectory from the initial state, depth first in action
/// order. `log_pf` is left at zero.
pub fn enumerate_trajectories<E: Environment>(env: &E, cap: usize) -> Result<Vec<Trajectory<E::State>>> {
    fn walk<E: Environment>(
        env: &E,
        states: &mut Vec<E::State>,
        actions: &mut Vec<usize>,
        out: &mut Vec<Trajectory<E::State>>,
        cap: usize,
    ) -> Result<()> {
        let s = states.last().expect("non-empty path").clone();
        if env.is_terminal(&s) {
            if out.len() == cap {
                return Err(Error::OracleUnavailable {
                    needed: cap as u128 + 1,
                    cap: cap as u128,
                });
            }
            out.push(Trajectory {
                states: states.clone(),
                actions: actions.clone(),
                reward: env.reward(&s)?,
                log_pf: 0.0,
            });
            return Ok(());
        }
        let mask = env.allowed_actions(&s)?;
        for a in (0..mask.len()).filter(|&a| mask[a]) {
            states.push(env.step(&s, a)?);
            actions.push(a);
            walk(env, states, actions, out, cap)?;
            states.pop();
            actions.pop();
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(env, &mut vec![env.initial_state()], &mut Vec::new(), &mut out, cap)?;
    Ok(out)
}

/// Mean absolute difference over terminals.
pub fn l1_distance(p: &DensityTable, q: &DensityTable) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    p.probs
        .iter()
        .zip(&q.probs)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / p.len() as f64
}

/// l1 error of the uniform density against `truth`.
pub fn uniform_l1(truth: &DensityTable) -> f64 {
    l1_distance(&DensityTable::uniform(truth.len()), truth)
}

/// Sliding window of visited terminal indices with running counts.
#[derive(Debug, Clone)]
pub struct VisitWindow {
    capacity: usize,
    queue: VecDeque<usize>,
    counts: Vec<u64>,
}

impl VisitWindow {
    pub fn new(capacity: usize, num_terminals: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            queue: VecDeque::new(),
            counts: vec![0; num_terminals],
        }
    }

    pub fn push(&mut self, terminal: usize) {
        if self.queue.len() == self.capacity {
            if let Some(old) = self.queue.pop_front() {
                self.counts[old] -= 1;
            }
        }
        self.queue.push_back(terminal);
        self.counts[terminal] += 1;
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn l1(&self, truth: &DensityTable) -> Option<f64> {
        empirical_l1(&self.counts, truth)
    }
}

/// l1 error of visit frequencies against `truth`; `None` for an empty window.
pub fn empirical_l1(counts: &[u64], truth: &DensityTable) -> Option<f64> {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return None;
    }
    let freq = DensityTable {
        probs: counts.iter().map(|&c| c as f64 / n as f64).collect(),
        partition: 1.0,
    };
    Some(l1_distance(&freq, truth))
}

/// `(mode cells, mode regions)` among `discovered`. Environments without a
/// region notion count every mode cell as its own region.
pub fn count_modes<'a, E: Environment>(
    env: &E,
    discovered: impl IntoIterator<Item = &'a E::State>,
) -> Result<(usize, usize)>
where
    E::State: 'a,
{
    let mut cells = HashSet::new();
    let mut regions = HashSet::new();
    let mut unnamed = 0;
    for x in discovered {
        if env.is_mode(x)? && cells.insert(x) {
            match env.mode_region(x) {
                Some(r) => {
                    regions.insert(r);
                }
                None => unnamed += 1,
            }
        }
    }
    Ok((cells.len(), regions.len() + unnamed))
}

/// Mean of the `k` largest rewards seen so far.
#[derive(Debug, Clone)]
pub struct TopK {
    k: usize,
    heap: BinaryHeap<Reverse<TotalF64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct TotalF64(f64);

impl Eq for TotalF64 {}

impl PartialOrd for TotalF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for TotalF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl TopK {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("top-K needs K >= 1".into()));
        }
        Ok(Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        })
    }

    pub fn push(&mut self, reward: f64) {
        if self.heap.len() < self.k {
            self.heap.push(Reverse(TotalF64(reward)));
        } else if let Some(Reverse(TotalF64(min))) = self.heap.peek().copied() {
            if reward > min {
                self.heap.pop();
                self.heap.push(Reverse(TotalF64(reward)));
            }
        }
    }

    /// `(mean, full)`; `full` is false while fewer than K rewards were seen.
    pub fn mean(&self) -> Option<(f64, bool)> {
        if self.heap.is_empty() {
            return None;
        }
        // Sorted summation keeps the value independent of heap layout.
        let mut v: Vec<f64> = self.heap.iter().map(|r| r.0 .0).collect();
        v.sort_by(f64::total_cmp);
        let sum: f64 = v.iter().sum();
        Some((sum / self.heap.len() as f64, self.heap.len() == self.k))
    }
}

pub fn topk_mean(rewards: &[f64], k: usize) -> Result<Option<(f64, bool)>> {
    let mut t = TopK::new(k)?;
    rewards.iter().for_each(|&r| t.push(r));
    Ok(t.mean())
}
