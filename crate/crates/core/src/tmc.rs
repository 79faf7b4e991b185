//! Exact task memory complexity.
//!
//! [`optimal_value`] solves the full-history problem by backward induction
//! over beliefs. [`best_value_with_memory`] searches deterministic
//! controllers that see the current observation plus a bank of `m` raw
//! observation slots and choose, each step, an action and a write (keep, or
//! store the current observation into slot `j`). [`compute_tmc`] returns the
//! smallest `m` whose controller value reaches the full-history optimum.
//!
//! Both searches run on a compiled form of the task: every reachable hidden
//! state gets an integer id, with transition, observation and
//! steps-to-success tables precomputed.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pomdp::{ActionId, Observation, Task};

pub const DEFAULT_EPSILON: f64 = 1e-9;
pub const DEFAULT_NODE_CAP: u64 = 1_000_000;
pub const DEFAULT_SEARCH_BUDGET: u64 = 20_000_000;
const MAX_STATES: usize = 2_000_000;
const UNREACHABLE: u8 = u8::MAX;

#[derive(Debug, Error, PartialEq)]
pub enum TmcError {
    #[error("history search exceeded the node cap of {cap}")]
    NodeCap { cap: u64 },
    #[error("reachable state space exceeds {0} states")]
    StateSpace(usize),
    #[error("{slots} slots over {observations} observations do not fit a 64-bit bank")]
    BankTooWide { slots: usize, observations: usize },
}

/// What a memory slot may hold; reported alongside every result.
pub const MEMORY_MODEL: &str = "raw-observation slots, one optional write per step";

struct Compiled {
    actions: usize,
    horizon: usize,
    /// `next[s * actions + a]`
    next: Vec<u32>,
    obs: Vec<u32>,
    observations: Vec<Observation>,
    success: Vec<bool>,
    /// Fewest steps from each state to success, capped at the horizon.
    dist: Vec<u8>,
    initial: Vec<u32>,
}

impl Compiled {
    fn new(spec: &dyn Task) -> Result<Self, TmcError> {
        let actions = spec.action_count();
        let horizon = spec.horizon();
        let mut ids = HashMap::new();
        let mut states = Vec::new();
        let mut obs_ids: HashMap<Observation, u32> = HashMap::new();
        let mut observations = Vec::new();
        let mut intern = |h: crate::pomdp::HiddenState, states: &mut Vec<_>| -> u32 {
            *ids.entry(h.clone()).or_insert_with(|| {
                states.push(h);
                (states.len() - 1) as u32
            })
        };
        let initial: Vec<u32> = spec.initial_states().into_iter().map(|h| intern(h, &mut states)).collect();
        let mut next = Vec::new();
        let mut obs = Vec::new();
        let mut success = Vec::new();
        let mut i = 0;
        while i < states.len() {
            if states.len() > MAX_STATES {
                return Err(TmcError::StateSpace(MAX_STATES));
            }
            let s = states[i].clone();
            let o = spec.observe(&s);
            let n = observations.len() as u32;
            let oid = *obs_ids.entry(o.clone()).or_insert_with(|| {
                observations.push(o);
                n
            });
            obs.push(oid);
            success.push(spec.success(&s));
            for a in 0..actions {
                let t = spec.transition(&s, ActionId(a as u16));
                next.push(intern(t, &mut states));
            }
            i += 1;
        }
        let n = states.len();
        let mut dist: Vec<u8> = success.iter().map(|&ok| if ok { 0 } else { UNREACHABLE }).collect();
        for _ in 0..horizon {
            let mut changed = false;
            for s in 0..n {
                if dist[s] == 0 {
                    continue;
                }
                let best = (0..actions).map(|a| dist[next[s * actions + a] as usize]).min().unwrap_or(UNREACHABLE);
                if best != UNREACHABLE && best + 1 < dist[s] {
                    dist[s] = best + 1;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        Ok(Self { actions, horizon, next, obs, observations, success, dist, initial })
    }

    #[inline]
    fn step(&self, s: u32, a: usize) -> u32 {
        self.next[s as usize * self.actions + a]
    }

    #[inline]
    fn feasible(&self, s: u32, remaining: usize) -> bool {
        let d = self.dist[s as usize];
        d != UNREACHABLE && (d as usize) <= remaining
    }
}

// ---------------------------------------------------------------------------
// Full-history optimum

struct HistorySolver<'a> {
    c: &'a Compiled,
    memo: HashMap<(Vec<u32>, usize), u32>,
    nodes: u64,
    cap: u64,
}

impl HistorySolver<'_> {
    /// Maximum number of particles in `belief` that reach success within
    /// `remaining` steps.
    fn value(&mut self, belief: &[u32], remaining: usize) -> Result<u32, TmcError> {
        let c = self.c;
        let mut wins = 0u32;
        let mut live: Vec<u32> = Vec::with_capacity(belief.len());
        for &s in belief {
            if c.success[s as usize] {
                wins += 1;
            } else if c.feasible(s, remaining) {
                live.push(s);
            }
        }
        if live.is_empty() || remaining == 0 {
            return Ok(wins);
        }
        live.sort_unstable();
        let key = (live, remaining);
        if let Some(&v) = self.memo.get(&key) {
            return Ok(wins + v);
        }
        self.nodes += 1;
        if self.nodes > self.cap {
            return Err(TmcError::NodeCap { cap: self.cap });
        }
        let live = &key.0;
        let bound = live.len() as u32;
        let mut order: Vec<(u32, usize)> = (0..c.actions)
            .map(|a| {
                let ok = live.iter().filter(|&&s| c.feasible(c.step(s, a), remaining - 1)).count() as u32;
                (ok, a)
            })
            .collect();
        order.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)));
        let mut best = 0u32;
        for (ub, a) in order {
            if ub <= best {
                break;
            }
            let mut groups: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
            for &s in live {
                let t = c.step(s, a);
                groups.entry(c.obs[t as usize]).or_default().push(t);
            }
            let mut total = 0;
            for g in groups.values() {
                total += self.value(g, remaining - 1)?;
            }
            best = best.max(total);
            if best == bound {
                break;
            }
        }
        self.memo.insert(key, best);
        Ok(wins + best)
    }
}

fn optimal_count(c: &Compiled, cap: u64) -> Result<(u32, u64), TmcError> {
    let mut solver = HistorySolver { c, memo: HashMap::new(), nodes: 0, cap };
    let mut groups: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for &s in &c.initial {
        groups.entry(c.obs[s as usize]).or_default().push(s);
    }
    let mut total = 0;
    for g in groups.values() {
        total += solver.value(g, c.horizon)?;
    }
    Ok((total, solver.nodes))
}

/// Optimal success probability for a policy that conditions on the full
/// history. Errors rather than approximating when the node cap is hit.
pub fn optimal_value(spec: &dyn Task) -> Result<f64, TmcError> {
    optimal_value_with_cap(spec, DEFAULT_NODE_CAP)
}

pub fn optimal_value_with_cap(spec: &dyn Task, cap: u64) -> Result<f64, TmcError> {
    let c = Compiled::new(spec)?;
    let (wins, _) = optimal_count(&c, cap)?;
    Ok(wins as f64 / c.initial.len() as f64)
}

// ---------------------------------------------------------------------------
// Bounded-memory controllers

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WriteOp {
    Keep,
    Store(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControllerEntry {
    pub obs: Observation,
    /// One entry per slot; `None` is blank.
    pub bank: Vec<Option<Observation>>,
    pub action: ActionId,
    pub write: WriteOp,
}

/// Decision table over every `(observation, bank)` pair the controller reaches.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControllerPolicy {
    pub slots: usize,
    pub entries: Vec<ControllerEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryValue {
    pub value: f64,
    pub successes: u32,
    pub episodes: u32,
    pub certified: bool,
    pub nodes_explored: u64,
    pub controller: ControllerPolicy,
}

/// `(observation id, packed bank)`; slot `j` occupies `bits` bits at
/// offset `j * bits` and holds 0 for blank or `1 + observation id`.
type Key = (u32, u64);

impl MemoryValue {
    fn best_found(&self, target: u32) -> bool {
        self.successes >= target
    }
}
type Table = HashMap<Key, (usize, WriteOp)>;

struct Layout {
    m: usize,
    bits: u32,
}

impl Layout {
    fn new(m: usize, observations: usize) -> Result<Self, TmcError> {
        let bits = usize::BITS - observations.leading_zeros();
        if m as u32 * bits > 64 {
            return Err(TmcError::BankTooWide { slots: m, observations });
        }
        Ok(Self { m, bits })
    }
    fn slot(&self, bank: u64, j: usize) -> u64 {
        (bank >> (j as u32 * self.bits)) & ((1u64 << self.bits) - 1)
    }
    fn filled(&self, bank: u64) -> usize {
        (0..self.m).take_while(|&j| self.slot(bank, j) != 0).count()
    }
    fn write(&self, bank: u64, obs: u32, w: WriteOp) -> u64 {
        match w {
            WriteOp::Keep => bank,
            WriteOp::Store(j) => {
                let shift = j as u32 * self.bits;
                let mask = ((1u64 << self.bits) - 1) << shift;
                (bank & !mask) | ((obs as u64 + 1) << shift)
            }
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Status {
    Running,
    Won,
    Lost,
}

#[derive(Clone)]
struct Particle {
    state: u32,
    bank: u64,
    t: usize,
    status: Status,
    /// `(state, bank)` pairs already passed through; a revisit is a loop.
    visited: Vec<(u32, u64)>,
}

/// Per observation: one representative per class of actions that act
/// identically on every reachable state showing that observation, and
/// whether that action leaves all of them unchanged.
struct ActionClasses {
    reps: Vec<Vec<(usize, bool)>>,
}

impl ActionClasses {
    fn new(c: &Compiled) -> Self {
        let mut by_obs: Vec<Vec<u32>> = vec![Vec::new(); c.observations.len()];
        for (s, &o) in c.obs.iter().enumerate() {
            by_obs[o as usize].push(s as u32);
        }
        let reps = by_obs
            .iter()
            .map(|states| {
                let mut seen: Vec<Vec<u32>> = Vec::new();
                let mut out = Vec::new();
                for a in 0..c.actions {
                    let sig: Vec<u32> = states.iter().map(|&s| c.step(s, a)).collect();
                    if !seen.contains(&sig) {
                        out.push((a, sig == *states));
                        seen.push(sig);
                    }
                }
                out
            })
            .collect();
        Self { reps }
    }
}

struct ControllerSearch<'a> {
    c: &'a Compiled,
    layout: Layout,
    classes: &'a ActionClasses,
    table: Table,
    /// Success count a branch must beat to be explored.
    best: u32,
    best_table: Option<Table>,
    target: u32,
    nodes: u64,
    budget: u64,
    exhausted: bool,
}

impl ControllerSearch<'_> {
    /// Advance until the particle wins, loses, or reaches an unassigned key.
    fn advance(&self, p: &mut Particle) {
        let c = self.c;
        while p.status == Status::Running {
            if c.success[p.state as usize] {
                p.status = Status::Won;
            } else if !c.feasible(p.state, c.horizon - p.t) || p.visited.contains(&(p.state, p.bank)) {
                p.status = Status::Lost;
            } else {
                let o = c.obs[p.state as usize];
                let Some(&(a, w)) = self.table.get(&(o, p.bank)) else { return };
                p.visited.push((p.state, p.bank));
                p.bank = self.layout.write(p.bank, o, w);
                p.state = c.step(p.state, a);
                p.t += 1;
            }
        }
    }

    fn options(&self, key: Key, blocked: &[&Particle]) -> Vec<(usize, WriteOp)> {
        let c = self.c;
        let l = &self.layout;
        let filled = l.filled(key.1);
        let mut writes = Vec::new();
        if filled < l.m {
            writes.push(WriteOp::Store(filled));
        }
        writes.push(WriteOp::Keep);
        for j in 0..filled {
            if l.slot(key.1, j) != key.0 as u64 + 1 {
                writes.push(WriteOp::Store(j));
            }
        }
        let mut actions: Vec<(usize, usize, bool)> = self.classes.reps[key.0 as usize]
            .iter()
            .map(|&(a, noop)| {
                let ok = blocked
                    .iter()
                    .filter(|p| {
                        let n = c.step(p.state, a);
                        n != p.state && c.feasible(n, c.horizon - p.t - 1)
                    })
                    .count();
                (ok, a, noop)
            })
            .collect();
        actions.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)));
        let mut out = Vec::new();
        for (_, a, noop) in actions {
            for &w in &writes {
                // Leaves every particle at this key where it was: a dead end
                // that any other option weakly dominates.
                if noop && w == WriteOp::Keep {
                    continue;
                }
                out.push((a, w));
            }
        }
        if out.is_empty() {
            out.push((0, WriteOp::Keep));
        }
        out
    }

    fn search(&mut self, mut particles: Vec<Particle>) {
        self.nodes += 1;
        if self.nodes > self.budget {
            self.exhausted = true;
            return;
        }
        let mut wins = 0u32;
        let mut alive = 0u32;
        let mut first_blocked = None;
        for (i, p) in particles.iter_mut().enumerate() {
            self.advance(p);
            match p.status {
                Status::Won => wins += 1,
                Status::Running => {
                    alive += 1;
                    first_blocked.get_or_insert(i);
                }
                Status::Lost => {}
            }
        }
        if wins + alive <= self.best {
            return;
        }
        let Some(fb) = first_blocked else {
            self.best = wins;
            self.best_table = Some(self.table.clone());
            return;
        };
        let c = self.c;
        let key = (c.obs[particles[fb].state as usize], particles[fb].bank);
        let blocked: Vec<&Particle> = particles
            .iter()
            .filter(|p| p.status == Status::Running && c.obs[p.state as usize] == key.0 && p.bank == key.1)
            .collect();
        for opt in self.options(key, &blocked) {
            self.table.insert(key, opt);
            self.search(particles.clone());
            self.table.remove(&key);
            if self.exhausted || self.best >= self.target {
                return;
            }
        }
    }
}

fn controller_from(c: &Compiled, layout: &Layout, table: &Table) -> ControllerPolicy {
    let mut entries: Vec<ControllerEntry> = table
        .iter()
        .map(|(&(o, bank), &(a, w))| ControllerEntry {
            obs: c.observations[o as usize].clone(),
            bank: (0..layout.m)
                .map(|j| match layout.slot(bank, j) {
                    0 => None,
                    v => Some(c.observations[v as usize - 1].clone()),
                })
                .collect(),
            action: ActionId(a as u16),
            write: w,
        })
        .collect();
    entries.sort_by(|x, y| (&x.obs, &x.bank).cmp(&(&y.obs, &y.bank)));
    ControllerPolicy { slots: layout.m, entries }
}

/// Search for the best controller with more than `beat` successes, stopping
/// as soon as one reaches `target`.
fn memory_search(c: &Compiled, classes: &ActionClasses, m: usize, budget: u64, beat: Option<u32>, target: u32) -> Result<MemoryValue, TmcError> {
    let layout = Layout::new(m, c.observations.len())?;
    let mut s = ControllerSearch {
        c,
        layout,
        classes,
        table: HashMap::new(),
        best: beat.unwrap_or(0),
        best_table: None,
        target,
        nodes: 0,
        budget,
        exhausted: false,
    };
    let particles: Vec<Particle> = c
        .initial
        .iter()
        .map(|&st| Particle { state: st, bank: 0, t: 0, status: Status::Running, visited: Vec::new() })
        .collect();
    if beat.is_none() {
        // Find something, even a zero-success controller.
        s.best = 0;
        s.best_table = Some(HashMap::new());
    }
    s.search(particles);
    let found = s.best_table.is_some();
    let successes = if found { s.best } else { beat.unwrap_or(0) };
    let controller = s.best_table.as_ref().map(|t| controller_from(c, &s.layout, t)).unwrap_or_default();
    Ok(MemoryValue {
        value: successes as f64 / c.initial.len() as f64,
        successes,
        episodes: c.initial.len() as u32,
        certified: !s.exhausted,
        nodes_explored: s.nodes,
        controller,
    })
}

/// Best success probability over deterministic controllers with `m` slots.
/// When `budget` search nodes run out the best value found so far is
/// returned with `certified = false`.
pub fn best_value_with_memory(spec: &dyn Task, m: usize, budget: u64) -> Result<MemoryValue, TmcError> {
    let c = Compiled::new(spec)?;
    let classes = ActionClasses::new(&c);
    memory_search(&c, &classes, m, budget, None, c.initial.len() as u32)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TmcResult {
    pub task: String,
    pub v_star: f64,
    pub v_by_m: Vec<f64>,
    /// Whether each `v_by_m` entry is exact rather than a lower bound.
    pub v_exact: Vec<bool>,
    /// Smallest sufficient slot count, or `None` when it exceeds `m_max`.
    pub tmc: Option<usize>,
    pub m_max: usize,
    /// The `tmc` verdict is proven, not budget-limited.
    pub certified: bool,
    pub nodes_explored: u64,
    pub memory_model: String,
}

impl TmcResult {
    pub fn tmc_display(&self) -> String {
        match self.tmc {
            Some(m) => m.to_string(),
            None => format!(">{}", self.m_max),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TmcConfig {
    pub m_max: usize,
    pub epsilon: f64,
    pub node_cap: u64,
    pub search_budget: u64,
}

impl Default for TmcConfig {
    fn default() -> Self {
        Self { m_max: 2, epsilon: DEFAULT_EPSILON, node_cap: DEFAULT_NODE_CAP, search_budget: DEFAULT_SEARCH_BUDGET }
    }
}

/// Full-history optimum, then controller values for `m = 0..=m_max` until
/// one reaches it.
///
/// For each `m` a decision search first asks whether any controller reaches
/// the optimum; only that answer decides `tmc` and `certified`. When it does
/// not, a second search finds the best value, which is exact when
/// `v_exact[m]` holds and a lower bound otherwise.
pub fn compute_tmc(spec: &dyn Task, cfg: &TmcConfig) -> Result<TmcResult, TmcError> {
    let c = Compiled::new(spec)?;
    let classes = ActionClasses::new(&c);
    let (star, mut nodes) = optimal_count(&c, cfg.node_cap)?;
    let n = c.initial.len() as f64;
    let v_star = star as f64 / n;
    let mut result = TmcResult {
        task: spec.name().to_string(),
        v_star,
        v_by_m: Vec::new(),
        v_exact: Vec::new(),
        tmc: None,
        m_max: cfg.m_max,
        certified: true,
        nodes_explored: 0,
        memory_model: MEMORY_MODEL.to_string(),
    };
    let mut floor = 0u32;
    for m in 0..=cfg.m_max {
        let decide = if star == 0 {
            None
        } else {
            Some(memory_search(&c, &classes, m, cfg.search_budget, Some(star - 1), star)?)
        };
        let reached = match &decide {
            None => true,
            Some(d) => {
                nodes += d.nodes_explored;
                result.certified &= d.certified;
                d.best_found(star)
            }
        };
        if reached || star as f64 / n <= floor as f64 / n + cfg.epsilon {
            result.v_by_m.push(v_star);
            result.v_exact.push(true);
            result.tmc = Some(m);
            break;
        }
        let best = memory_search(&c, &classes, m, cfg.search_budget, floor.checked_sub(1), star)?;
        nodes += best.nodes_explored;
        floor = floor.max(best.successes);
        result.v_by_m.push(floor as f64 / n);
        result.v_exact.push(best.certified);
    }
    result.nodes_explored = nodes;
    Ok(result)
}

/// Answer to "can some `m`-slot controller match the full-history optimum?"
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Reached,
    Unreachable,
    /// The search budget ran out first.
    Unknown,
}

/// Decide whether `m` slots suffice without computing the best value.
pub fn memory_suffices(spec: &dyn Task, m: usize, cfg: &TmcConfig) -> Result<Decision, TmcError> {
    let c = Compiled::new(spec)?;
    let classes = ActionClasses::new(&c);
    let (star, _) = optimal_count(&c, cfg.node_cap)?;
    if star == 0 {
        return Ok(Decision::Reached);
    }
    let d = memory_search(&c, &classes, m, cfg.search_budget, Some(star - 1), star)?;
    Ok(if d.best_found(star) {
        Decision::Reached
    } else if d.certified {
        Decision::Unreachable
    } else {
        Decision::Unknown
    })
}
