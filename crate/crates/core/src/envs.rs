//! Deterministic DAG environments.
//!
//! Both environments expose the same [`Environment`] surface: action masks,
//! transitions, parent edges, rewards and exhaustive enumeration for the
//! oracles. A trajectory's last state is always a terminal node; for the
//! hypergrid the stop action produces a terminal copy of the current cell.

use std::collections::HashMap;
use std::fmt::Debug;
use std::hash::Hash;
use std::io::BufRead;
use std::path::Path;

use log::warn;

use crate::{Error, Result};

/// Default limit on exhaustive enumeration.
pub const DEFAULT_ENUMERATION_CAP: u128 = 10_000_000;

pub trait Environment: Send + Sync {
    type State: Clone + Eq + Hash + Ord + Debug + Send + Sync;

    fn num_actions(&self) -> usize;

    fn initial_state(&self) -> Self::State;

    fn is_terminal(&self, s: &Self::State) -> bool;

    /// Mask over actions. Calling it on a terminal state is a usage error.
    fn allowed_actions(&self, s: &Self::State) -> Result<Vec<bool>>;

    fn step(&self, s: &Self::State, action: usize) -> Result<Self::State>;

    /// Incoming edges `(parent, action)`. Several edges may share a parent.
    fn parents(&self, s: &Self::State) -> Vec<(Self::State, usize)>;

    /// Strictly positive reward of a terminal state.
    fn reward(&self, x: &Self::State) -> Result<f64>;

    fn encoding_dim(&self) -> usize;

    fn encode_into(&self, s: &Self::State, out: &mut [f64]);

    fn encode(&self, s: &Self::State) -> Vec<f64> {
        let mut out = vec![0.0; self.encoding_dim()];
        self.encode_into(s, &mut out);
        out
    }

    /// Upper bound on the number of actions in one trajectory.
    fn max_trajectory_len(&self) -> usize;

    fn num_terminals(&self) -> u128;

    /// Number of nodes (non-terminal states plus terminal nodes).
    fn num_states(&self) -> u128;

    /// Dense index in `0..num_terminals()`; matches [`Environment::enumerate_terminals`] order.
    fn terminal_index(&self, x: &Self::State) -> usize;

    fn enumerate_terminals(&self, cap: u128) -> Result<Vec<Self::State>>;

    /// Every node, parents before children.
    fn enumerate_states(&self, cap: u128) -> Result<Vec<Self::State>>;

    fn max_reward(&self) -> Result<f64>;

    fn is_mode(&self, x: &Self::State) -> Result<bool>;

    /// Identifier of the high-reward region a mode belongs to, when the
    /// environment has such a notion.
    fn mode_region(&self, _x: &Self::State) -> Option<u64> {
        None
    }

    fn mode_set(&self, cap: u128) -> Result<Vec<Self::State>> {
        let mut modes = Vec::new();
        for x in self.enumerate_terminals(cap)? {
            if self.is_mode(&x)? {
                modes.push(x);
            }
        }
        Ok(modes)
    }

    fn describe(&self, s: &Self::State) -> String;

    /// Replay an action list from the initial state. Returns every visited
    /// state including the initial one.
    fn replay(&self, actions: &[usize]) -> Result<Vec<Self::State>> {
        let mut states = Vec::with_capacity(actions.len() + 1);
        let mut s = self.initial_state();
        for &a in actions {
            if self.is_terminal(&s) {
                return Err(Error::Data("action after a terminal state".into()));
            }
            let next = self.step(&s, a)?;
            states.push(std::mem::replace(&mut s, next));
        }
        states.push(s);
        Ok(states)
    }
}

fn check_cap(needed: u128, cap: u128) -> Result<()> {
    if needed > cap {
        return Err(Error::OracleUnavailable { needed, cap });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Hypergrid

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridState {
    pub coords: Vec<u16>,
    /// Set once the stop action was taken.
    pub terminal: bool,
}

impl GridState {
    pub fn new(coords: Vec<u16>) -> Self {
        Self {
            coords,
            terminal: false,
        }
    }

    pub fn terminal(coords: Vec<u16>) -> Self {
        Self {
            coords,
            terminal: true,
        }
    }
}

/// D-dimensional grid with `H` cells per side; actions `0..D` increment a
/// coordinate and action `D` stops.
#[derive(Debug, Clone, PartialEq)]
pub struct HypergridEnv {
    dims: usize,
    horizon: usize,
    pub r0: f64,
    pub r1: f64,
    pub r2: f64,
}

/// Which reward bands a single coordinate falls in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Bands {
    outer: bool,
    inner: bool,
}

impl HypergridEnv {
    pub fn new(dims: usize, horizon: usize, r0: f64, r1: f64, r2: f64) -> Result<Self> {
        if dims == 0 {
            return Err(Error::Config("hypergrid needs at least one dimension".into()));
        }
        if horizon < 2 || horizon > u16::MAX as usize {
            return Err(Error::Config(format!("horizon must be in 2..=65535, got {horizon}")));
        }
        for (name, r) in [("r0", r0), ("r1", r1), ("r2", r2)] {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {r}")));
            }
        }
        Ok(Self {
            dims,
            horizon,
            r0,
            r1,
            r2,
        })
    }

    /// Grid with the customary `r1 = 0.5`, `r2 = 2`.
    pub fn with_r0(dims: usize, horizon: usize, r0: f64) -> Result<Self> {
        Self::new(dims, horizon, r0, 0.5, 2.0)
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn stop_action(&self) -> usize {
        self.dims
    }

    /// Band membership of `|x/(H-1) - 1/2|` in `(1/4, 1/2]` and `(3/10, 2/5]`,
    /// evaluated in exact integer arithmetic.
    fn bands(&self, x: u16) -> Bands {
        let span = (self.horizon - 1) as i64;
        let n = (2 * x as i64 - span).abs();
        let den = 2 * span;
        Bands {
            outer: 4 * n > den && 2 * n <= den,
            inner: 10 * n > 3 * den && 5 * n <= 2 * den,
        }
    }

    /// Coordinates lying in the inner band (the per-dimension mode coordinates).
    pub fn inner_band_coords(&self) -> Vec<u16> {
        (0..self.horizon as u16).filter(|&x| self.bands(x).inner).collect()
    }

    /// `R(x) = r0 + r1 * prod 1[outer band] + r2 * prod 1[inner band]`.
    pub fn reward_of(&self, coords: &[u16]) -> f64 {
        let all_outer = coords.iter().all(|&x| self.bands(x).outer);
        let all_inner = coords.iter().all(|&x| self.bands(x).inner);
        self.combine(all_outer, all_inner)
    }

    fn combine(&self, all_outer: bool, all_inner: bool) -> f64 {
        let mut r = self.r0;
        if all_outer {
            r += self.r1;
        }
        if all_inner {
            r += self.r2;
        }
        r
    }

    fn coords_of_index(&self, mut idx: usize) -> Vec<u16> {
        let mut coords = vec![0u16; self.dims];
        for c in coords.iter_mut().rev() {
            *c = (idx % self.horizon) as u16;
            idx /= self.horizon;
        }
        coords
    }

    fn grid_size(&self) -> u128 {
        (self.horizon as u128).saturating_pow(self.dims as u32)
    }

    fn check_state(&self, s: &GridState) -> Result<()> {
        if s.coords.len() != self.dims || s.coords.iter().any(|&c| c as usize >= self.horizon) {
            return Err(Error::Usage(format!("state {:?} is outside the grid", s.coords)));
        }
        Ok(())
    }

    /// Inverse of the one-hot encoding; `None` when `v` is not a valid encoding.
    pub fn decode(&self, v: &[f64]) -> Option<GridState> {
        if v.len() != self.dims * self.horizon {
            return None;
        }
        let mut coords = Vec::with_capacity(self.dims);
        for block in v.chunks(self.horizon) {
            let hot: Vec<usize> = block
                .iter()
                .enumerate()
                .filter(|(_, &x)| x == 1.0)
                .map(|(i, _)| i)
                .collect();
            if hot.len() != 1 || block.iter().filter(|&&x| x != 0.0).count() != 1 {
                return None;
            }
            coords.push(hot[0] as u16);
        }
        Some(GridState::new(coords))
    }
}

impl Environment for HypergridEnv {
    type State = GridState;

    fn num_actions(&self) -> usize {
        self.dims + 1
    }

    fn initial_state(&self) -> GridState {
        GridState::new(vec![0; self.dims])
    }

    fn is_terminal(&self, s: &GridState) -> bool {
        s.terminal
    }

    fn allowed_actions(&self, s: &GridState) -> Result<Vec<bool>> {
        self.check_state(s)?;
        if s.terminal {
            return Err(Error::Usage("allowed_actions on a terminal state".into()));
        }
        let mut mask: Vec<bool> = s
            .coords
            .iter()
            .map(|&c| (c as usize) < self.horizon - 1)
            .collect();
        mask.push(true);
        Ok(mask)
    }

    fn step(&self, s: &GridState, action: usize) -> Result<GridState> {
        let mask = self.allowed_actions(s)?;
        if !mask.get(action).copied().unwrap_or(false) {
            return Err(Error::Usage(format!(
                "action {action} not allowed at {:?}",
                s.coords
            )));
        }
        if action == self.dims {
            return Ok(GridState::terminal(s.coords.clone()));
        }
        let mut coords = s.coords.clone();
        coords[action] += 1;
        Ok(GridState::new(coords))
    }

    fn parents(&self, s: &GridState) -> Vec<(GridState, usize)> {
        if s.terminal {
            return vec![(GridState::new(s.coords.clone()), self.dims)];
        }
        s.coords
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(d, _)| {
                let mut coords = s.coords.clone();
                coords[d] -= 1;
                (GridState::new(coords), d)
            })
            .collect()
    }

    fn reward(&self, x: &GridState) -> Result<f64> {
        self.check_state(x)?;
        Ok(self.reward_of(&x.coords))
    }

    fn encoding_dim(&self) -> usize {
        self.dims * self.horizon
    }

    fn encode_into(&self, s: &GridState, out: &mut [f64]) {
        out.fill(0.0);
        for (d, &c) in s.coords.iter().enumerate() {
            out[d * self.horizon + c as usize] = 1.0;
        }
    }

    fn max_trajectory_len(&self) -> usize {
        self.dims * (self.horizon - 1) + 1
    }

    fn num_terminals(&self) -> u128 {
        self.grid_size()
    }

    fn num_states(&self) -> u128 {
        self.grid_size().saturating_mul(2)
    }

    fn terminal_index(&self, x: &GridState) -> usize {
        x.coords
            .iter()
            .fold(0usize, |acc, &c| acc * self.horizon + c as usize)
    }

    fn enumerate_terminals(&self, cap: u128) -> Result<Vec<GridState>> {
        check_cap(self.grid_size(), cap)?;
        Ok((0..self.grid_size() as usize)
            .map(|i| GridState::terminal(self.coords_of_index(i)))
            .collect())
    }

    fn enumerate_states(&self, cap: u128) -> Result<Vec<GridState>> {
        check_cap(self.num_states(), cap)?;
        let n = self.grid_size() as usize;
        let mut keyed: Vec<(usize, bool, usize)> = (0..n)
            .flat_map(|i| {
                let sum: usize = self.coords_of_index(i).iter().map(|&c| c as usize).sum();
                [(sum, false, i), (sum, true, i)]
            })
            .collect();
        keyed.sort_unstable();
        Ok(keyed
            .into_iter()
            .map(|(_, terminal, i)| GridState {
                coords: self.coords_of_index(i),
                terminal,
            })
            .collect())
    }

    fn max_reward(&self) -> Result<f64> {
        // Coordinate 0 is always in the outer band.
        let any_inner = !self.inner_band_coords().is_empty();
        Ok(self.combine(true, any_inner))
    }

    fn is_mode(&self, x: &GridState) -> Result<bool> {
        Ok(self.reward(x)? == self.max_reward()?)
    }

    fn mode_region(&self, x: &GridState) -> Option<u64> {
        let span = self.horizon - 1;
        Some(
            x.coords
                .iter()
                .enumerate()
                .filter(|(_, &c)| 2 * c as usize > span)
                .fold(0u64, |acc, (d, _)| acc | (1 << d)),
        )
    }

    fn describe(&self, s: &GridState) -> String {
        let inner: Vec<String> = s.coords.iter().map(u16::to_string).collect();
        format!("({})", inner.join(","))
    }
}

// ---------------------------------------------------------------------------
// Prepend/append sequences

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SeqState {
    /// Token indices into the alphabet.
    pub tokens: Vec<u8>,
}

/// Raw `sequence -> reward` map as read from disk.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RewardTable {
    pub entries: HashMap<String, f64>,
}

impl RewardTable {
    /// Reads UTF-8 `sequence,reward` lines. A first line whose reward does
    /// not parse is treated as a header; duplicate keys keep the last value.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        Self::parse(std::io::BufReader::new(file), path)
    }

    pub fn parse<R: BufRead>(reader: R, path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message,
            };
            let Some((seq, reward)) = line.rsplit_once(',') else {
                return Err(parse_err(format!("expected `sequence,reward`, got {line:?}")));
            };
            let seq = seq.trim();
            let reward = match reward.trim().parse::<f64>() {
                Ok(r) if r.is_finite() => r,
                Ok(r) => return Err(parse_err(format!("reward must be finite, got {r}"))),
                Err(_) if line_no == 1 => continue,
                Err(e) => return Err(parse_err(format!("bad reward {reward:?}: {e}"))),
            };
            if seq.is_empty() {
                return Err(parse_err("empty sequence".into()));
            }
            if entries.insert(seq.to_string(), reward).is_some() {
                warn!("{}:{line_no}: duplicate sequence {seq:?}, keeping the last value", path.display());
            }
        }
        Ok(Self { entries })
    }
}

/// Sequence MDP: each step prepends or appends one token; episodes end at
/// length `L`. Actions `0..A` prepend token `a`, actions `A..2A` append token `a - A`.
#[derive(Debug, Clone)]
pub struct SeqEnv {
    alphabet: Vec<char>,
    length: usize,
    table: HashMap<Vec<u8>, f64>,
    beta: f64,
    mode_tol: f64,
}

/// Lower clamp applied to table rewards before the exponent.
pub const SEQ_REWARD_FLOOR: f64 = 1e-6;

impl SeqEnv {
    pub fn new(alphabet: Vec<char>, length: usize, table: &RewardTable, beta: f64) -> Result<Self> {
        if alphabet.is_empty() || alphabet.len() > u8::MAX as usize {
            return Err(Error::Config("alphabet must have 1..=255 tokens".into()));
        }
        let mut seen = alphabet.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != alphabet.len() {
            return Err(Error::Config("alphabet tokens must be distinct".into()));
        }
        if length == 0 {
            return Err(Error::Config("sequence length must be positive".into()));
        }
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::Config(format!("beta must be finite and >= 0, got {beta}")));
        }
        let mut env = Self {
            alphabet,
            length,
            table: HashMap::with_capacity(table.entries.len()),
            beta,
            mode_tol: 0.0,
        };
        for (seq, &r) in &table.entries {
            let tokens = env.tokens_of(seq)?;
            env.table.insert(tokens, r);
        }
        Ok(env)
    }

    pub fn with_mode_tol(mut self, tol: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&tol) {
            return Err(Error::Config(format!("mode tolerance must be in [0, 1), got {tol}")));
        }
        self.mode_tol = tol;
        Ok(self)
    }

    pub fn alphabet(&self) -> &[char] {
        &self.alphabet
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    fn tokens_of(&self, seq: &str) -> Result<Vec<u8>> {
        let tokens = seq
            .chars()
            .map(|c| {
                self.alphabet
                    .iter()
                    .position(|&a| a == c)
                    .map(|p| p as u8)
                    .ok_or_else(|| Error::Data(format!("token {c:?} in {seq:?} is not in the alphabet")))
            })
            .collect::<Result<Vec<u8>>>()?;
        if tokens.len() != self.length {
            return Err(Error::Data(format!(
                "sequence {seq:?} has length {}, expected {}",
                tokens.len(),
                self.length
            )));
        }
        Ok(tokens)
    }

    pub fn state_of(&self, seq: &str) -> Result<SeqState> {
        let tokens = seq
            .chars()
            .map(|c| {
                self.alphabet
                    .iter()
                    .position(|&a| a == c)
                    .map(|p| p as u8)
                    .ok_or_else(|| Error::Data(format!("token {c:?} is not in the alphabet")))
            })
            .collect::<Result<Vec<u8>>>()?;
        if tokens.len() > self.length {
            return Err(Error::Data(format!("{seq:?} is longer than {}", self.length)));
        }
        Ok(SeqState { tokens })
    }

    pub fn text(&self, s: &SeqState) -> String {
        s.tokens.iter().map(|&t| self.alphabet[t as usize]).collect()
    }

    fn effective(&self, raw: f64) -> f64 {
        raw.max(SEQ_REWARD_FLOOR).powf(self.beta)
    }

    fn count_up_to(&self, len: usize) -> u128 {
        let a = self.alphabet.len() as u128;
        (0..=len as u32).fold(0u128, |acc, l| acc.saturating_add(a.saturating_pow(l)))
    }

    fn sequences_of_len(&self, len: usize) -> impl Iterator<Item = SeqState> + '_ {
        let a = self.alphabet.len();
        let total = a.pow(len as u32);
        (0..total).map(move |mut idx| {
            let mut tokens = vec![0u8; len];
            for t in tokens.iter_mut().rev() {
                *t = (idx % a) as u8;
                idx /= a;
            }
            SeqState { tokens }
        })
    }
}

impl Environment for SeqEnv {
    type State = SeqState;

    fn num_actions(&self) -> usize {
        2 * self.alphabet.len()
    }

    fn initial_state(&self) -> SeqState {
        SeqState { tokens: Vec::new() }
    }

    fn is_terminal(&self, s: &SeqState) -> bool {
        s.tokens.len() >= self.length
    }

    fn allowed_actions(&self, s: &SeqState) -> Result<Vec<bool>> {
        if self.is_terminal(s) {
            return Err(Error::Usage("allowed_actions on a terminal sequence".into()));
        }
        Ok(vec![true; self.num_actions()])
    }

    fn step(&self, s: &SeqState, action: usize) -> Result<SeqState> {
        if self.is_terminal(s) {
            return Err(Error::Usage("step from a terminal sequence".into()));
        }
        let a = self.alphabet.len();
        if action >= 2 * a {
            return Err(Error::Usage(format!("action {action} out of range")));
        }
        let mut tokens = Vec::with_capacity(s.tokens.len() + 1);
        if action < a {
            tokens.push(action as u8);
            tokens.extend_from_slice(&s.tokens);
        } else {
            tokens.extend_from_slice(&s.tokens);
            tokens.push((action - a) as u8);
        }
        Ok(SeqState { tokens })
    }

    fn parents(&self, s: &SeqState) -> Vec<(SeqState, usize)> {
        let Some((&first, rest)) = s.tokens.split_first() else {
            return Vec::new();
        };
        let (&last, init) = s.tokens.split_last().expect("non-empty");
        let a = self.alphabet.len();
        vec![
            (SeqState { tokens: rest.to_vec() }, first as usize),
            (SeqState { tokens: init.to_vec() }, a + last as usize),
        ]
    }

    fn reward(&self, x: &SeqState) -> Result<f64> {
        if x.tokens.len() != self.length {
            return Err(Error::Usage(format!(
                "reward of a non-terminal sequence {:?}",
                self.text(x)
            )));
        }
        self.table
            .get(&x.tokens)
            .map(|&r| self.effective(r))
            .ok_or_else(|| Error::MissingReward(self.text(x)))
    }

    fn encoding_dim(&self) -> usize {
        self.length * (self.alphabet.len() + 1)
    }

    fn encode_into(&self, s: &SeqState, out: &mut [f64]) {
        out.fill(0.0);
        let width = self.alphabet.len() + 1;
        for slot in 0..self.length {
            let hot = s.tokens.get(slot).map_or(self.alphabet.len(), |&t| t as usize);
            out[slot * width + hot] = 1.0;
        }
    }

    fn max_trajectory_len(&self) -> usize {
        self.length
    }

    fn num_terminals(&self) -> u128 {
        (self.alphabet.len() as u128).saturating_pow(self.length as u32)
    }

    fn num_states(&self) -> u128 {
        self.count_up_to(self.length)
    }

    fn terminal_index(&self, x: &SeqState) -> usize {
        let a = self.alphabet.len();
        x.tokens.iter().fold(0usize, |acc, &t| acc * a + t as usize)
    }

    fn enumerate_terminals(&self, cap: u128) -> Result<Vec<SeqState>> {
        check_cap(self.num_terminals(), cap)?;
        Ok(self.sequences_of_len(self.length).collect())
    }

    fn enumerate_states(&self, cap: u128) -> Result<Vec<SeqState>> {
        check_cap(self.num_states(), cap)?;
        Ok((0..=self.length)
            .flat_map(|len| self.sequences_of_len(len))
            .collect())
    }

    fn max_reward(&self) -> Result<f64> {
        self.table
            .values()
            .map(|&r| self.effective(r))
            .fold(None, |m: Option<f64>, r| Some(m.map_or(r, |m| m.max(r))))
            .ok_or_else(|| Error::Data("reward table is empty".into()))
    }

    fn is_mode(&self, x: &SeqState) -> Result<bool> {
        Ok(self.reward(x)? >= (1.0 - self.mode_tol) * self.max_reward()?)
    }

    fn describe(&self, s: &SeqState) -> String {
        self.text(s)
    }
}
