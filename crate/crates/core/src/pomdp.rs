//! Finite episodic POMDP contract, the episode engine, and trace recording.
//!
//! All randomness lives in the initial-state draw: tasks expose a finite,
//! uniformly weighted support of initial states and a deterministic
//! transition function, so exact oracles can enumerate everything an agent
//! could ever see.

use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SplitMix64;

pub const TRACE_SCHEMA_VERSION: u32 = 1;

/// One observation: a fixed-length tuple of per-channel symbols.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Observation(pub Vec<u8>);

impl Observation {
    pub fn symbols(&self) -> &[u8] {
        &self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionId(pub u16);

impl ActionId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Task-specific latent record, packed into bytes. Each task documents its layout.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HiddenState(pub Vec<u8>);

/// Task memory complexity annotation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TmcLabel {
    M0,
    M1,
    Mn,
}

impl fmt::Display for TmcLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TmcLabel::M0 => "M(0)",
            TmcLabel::M1 => "M(1)",
            TmcLabel::Mn => "M(n)",
        })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PomdpError {
    #[error("action code {action} out of range for task {task} ({count} actions)")]
    ActionOutOfRange { task: String, action: u16, count: usize },
    #[error("step called on a finished episode")]
    EpisodeDone,
    #[error("max_steps {max_steps} exceeds horizon {horizon}")]
    HorizonExceeded { max_steps: usize, horizon: usize },
}

/// A finite episodic POMDP.
///
/// `transition`, `observe` and `success` must be pure. Success must be
/// absorbing: once `success(s)` holds, it holds for every successor.
pub trait Task: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn horizon(&self) -> usize;
    /// Alphabet size of each observation channel.
    fn alphabet(&self) -> &[usize];
    fn action_names(&self) -> &[String];
    /// Uniformly weighted support of the initial-state distribution.
    fn initial_states(&self) -> Vec<HiddenState>;
    fn transition(&self, state: &HiddenState, action: ActionId) -> HiddenState;
    fn observe(&self, state: &HiddenState) -> Observation;
    fn success(&self, state: &HiddenState) -> bool;
    fn tmc_label(&self) -> TmcLabel;
    /// Display names of the subtask vocabulary. Singleton for undecomposed tasks.
    fn subtask_vocab(&self) -> &[String];
    /// Whether the memory policy plans over subtasks for this task.
    fn decomposed(&self) -> bool {
        self.tmc_label() == TmcLabel::Mn
    }
    /// Ground-truth end signal: does `action`, taken in `before` and leading
    /// to `after`, finish `subtask`?
    fn completes_subtask(
        &self,
        subtask: usize,
        before: &HiddenState,
        action: ActionId,
        after: &HiddenState,
    ) -> bool;
    /// Scripted oracle with hidden-state access.
    fn expert(&self) -> Box<dyn ExpertPolicy>;

    fn action_count(&self) -> usize {
        self.action_names().len()
    }
    fn channel_count(&self) -> usize {
        self.alphabet().len()
    }
    fn feature_dim(&self) -> usize {
        self.alphabet().iter().sum()
    }
}

pub type TaskSpec = Arc<dyn Task>;

/// Expert decision for one step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExpertStep {
    pub action: ActionId,
    pub subtask: usize,
    pub end_flag: bool,
}

/// Stateful scripted expert. `act` sees the hidden state.
pub trait ExpertPolicy: Send {
    fn act(&mut self, state: &HiddenState) -> ExpertStep;
}

/// Sample the initial state for `seed` and observe it.
pub fn reset(spec: &dyn Task, seed: u64) -> (HiddenState, Observation) {
    let support = spec.initial_states();
    let mut rng = SplitMix64::new(seed);
    let state = support[rng.below(support.len() as u64) as usize].clone();
    let obs = spec.observe(&state);
    (state, obs)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub state: HiddenState,
    pub obs: Observation,
    pub success: bool,
}

/// Apply one action. Illegal-but-valid primitives are no-ops inside each task.
pub fn step(spec: &dyn Task, state: &HiddenState, action: ActionId) -> Result<StepResult, PomdpError> {
    check_action(spec, action)?;
    let next = spec.transition(state, action);
    let obs = spec.observe(&next);
    let success = spec.success(&next);
    Ok(StepResult { state: next, obs, success })
}

fn check_action(spec: &dyn Task, action: ActionId) -> Result<(), PomdpError> {
    if action.index() >= spec.action_count() {
        return Err(PomdpError::ActionOutOfRange {
            task: spec.name().to_string(),
            action: action.0,
            count: spec.action_count(),
        });
    }
    Ok(())
}

/// Per-episode engine state; tracks the step budget.
#[derive(Debug, Clone)]
pub struct Episode {
    pub state: HiddenState,
    pub obs: Observation,
    pub t: usize,
    pub max_steps: usize,
    pub done: bool,
    pub success: bool,
}

impl Episode {
    pub fn new(spec: &dyn Task, seed: u64, max_steps: usize) -> Self {
        let (state, obs) = reset(spec, seed);
        let success = spec.success(&state);
        Self { state, obs, t: 0, max_steps, done: success || max_steps == 0, success }
    }

    /// Returns `done`.
    pub fn advance(&mut self, spec: &dyn Task, action: ActionId) -> Result<bool, PomdpError> {
        if self.done {
            return Err(PomdpError::EpisodeDone);
        }
        let r = step(spec, &self.state, action)?;
        self.state = r.state;
        self.obs = r.obs;
        self.success = r.success;
        self.t += 1;
        self.done = self.success || self.t >= self.max_steps;
        Ok(self.done)
    }
}

/// One-hot concatenation over channels.
pub fn featurize(spec: &dyn Task, obs: &Observation) -> Vec<f32> {
    let mut out = vec![0.0; spec.feature_dim()];
    let mut offset = 0;
    for (&sym, &size) in obs.0.iter().zip(spec.alphabet()) {
        debug_assert!((sym as usize) < size);
        out[offset + sym as usize] = 1.0;
        offset += size;
    }
    out
}

// ---------------------------------------------------------------------------
// Agents and rollouts

pub struct StepView<'a> {
    pub t: usize,
    pub obs: &'a Observation,
    /// Privileged; only scripted experts read it.
    pub hidden: &'a HiddenState,
}

pub struct StepOutcome<'a> {
    pub t: usize,
    pub before: &'a HiddenState,
    pub action: ActionId,
    pub after: &'a HiddenState,
    pub next_obs: &'a Observation,
    pub done: bool,
    pub success: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AgentStep {
    pub action: ActionId,
    pub subtask: usize,
}

/// Step-policy callback driven by [`rollout`].
pub trait Agent {
    fn begin(&mut self, spec: &dyn Task, obs: &Observation, seed: u64) -> Result<(), String>;
    fn act(&mut self, spec: &dyn Task, view: &StepView<'_>) -> Result<AgentStep, String>;
    /// Called after the engine applies the action. Returns the end flag for the step.
    fn after_step(&mut self, spec: &dyn Task, outcome: &StepOutcome<'_>) -> Result<bool, String>;
    fn planner_calls(&self) -> usize;
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub obs: Observation,
    pub action: ActionId,
    pub end_flag: bool,
    pub subtask: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub task: String,
    pub seed: u64,
    pub steps: Vec<TraceStep>,
    pub success: bool,
    pub step_count: usize,
    pub planner_calls: usize,
    /// Subtask terminations that triggered a replan.
    pub completed_subtasks: usize,
    pub failure: Option<String>,
}

/// Run one seeded episode with `agent`.
pub fn rollout(
    spec: &dyn Task,
    agent: &mut dyn Agent,
    seed: u64,
    max_steps: usize,
) -> Result<EpisodeTrace, PomdpError> {
    if max_steps > spec.horizon() {
        return Err(PomdpError::HorizonExceeded { max_steps, horizon: spec.horizon() });
    }
    let mut ep = Episode::new(spec, seed, max_steps);
    let mut trace = EpisodeTrace {
        task: spec.name().to_string(),
        seed,
        steps: Vec::new(),
        success: ep.success,
        step_count: 0,
        planner_calls: 0,
        completed_subtasks: 0,
        failure: None,
    };
    if let Err(e) = agent.begin(spec, &ep.obs, seed) {
        trace.failure = Some(e);
        trace.success = false;
        return Ok(trace);
    }
    while !ep.done {
        let view = StepView { t: ep.t, obs: &ep.obs, hidden: &ep.state };
        let decision = match agent.act(spec, &view) {
            Ok(d) => d,
            Err(e) => {
                trace.failure = Some(e);
                break;
            }
        };
        let obs = ep.obs.clone();
        let before = ep.state.clone();
        ep.advance(spec, decision.action)?;
        let outcome = StepOutcome {
            t: ep.t - 1,
            before: &before,
            action: decision.action,
            after: &ep.state,
            next_obs: &ep.obs,
            done: ep.done,
            success: ep.success,
        };
        let end_flag = match agent.after_step(spec, &outcome) {
            Ok(f) => f,
            Err(e) => {
                trace.failure = Some(e);
                break;
            }
        };
        if end_flag && !ep.done {
            trace.completed_subtasks += 1;
        }
        trace.steps.push(TraceStep { obs, action: decision.action, end_flag, subtask: decision.subtask });
    }
    trace.step_count = trace.steps.len();
    trace.planner_calls = agent.planner_calls();
    trace.success = trace.failure.is_none() && ep.success;
    Ok(trace)
}

/// Re-feed the trace's actions and return the visited hidden states.
pub fn replay(spec: &dyn Task, trace: &EpisodeTrace) -> Result<Vec<HiddenState>, PomdpError> {
    let (mut state, _) = reset(spec, trace.seed);
    let mut states = vec![state.clone()];
    for s in &trace.steps {
        state = step(spec, &state, s.action)?.state;
        states.push(state.clone());
    }
    Ok(states)
}

#[derive(Serialize, Deserialize)]
struct TraceHeader {
    schema: u32,
    task: String,
    seed: u64,
    success: bool,
    step_count: usize,
    planner_calls: usize,
    completed_subtasks: usize,
    failure: Option<String>,
}

impl EpisodeTrace {
    /// Line-delimited JSON: one header line, then one object per step.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header = TraceHeader {
            schema: TRACE_SCHEMA_VERSION,
            task: self.task.clone(),
            seed: self.seed,
            success: self.success,
            step_count: self.step_count,
            planner_calls: self.planner_calls,
            completed_subtasks: self.completed_subtasks,
            failure: self.failure.clone(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for s in &self.steps {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> std::io::Result<Self> {
        let invalid = |e: String| std::io::Error::new(std::io::ErrorKind::InvalidData, e);
        let mut lines = r.lines();
        let first = lines.next().ok_or_else(|| invalid("empty trace".into()))??;
        let h: TraceHeader = serde_json::from_str(&first).map_err(|e| invalid(e.to_string()))?;
        if h.schema != TRACE_SCHEMA_VERSION {
            return Err(invalid(format!("trace schema {} unsupported", h.schema)));
        }
        let mut steps = Vec::new();
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            steps.push(serde_json::from_str(&line).map_err(|e| invalid(e.to_string()))?);
        }
        Ok(EpisodeTrace {
            task: h.task,
            seed: h.seed,
            steps,
            success: h.success,
            step_count: h.step_count,
            planner_calls: h.planner_calls,
            completed_subtasks: h.completed_subtasks,
            failure: h.failure,
        })
    }
}

/// Wraps a task's scripted expert as an [`Agent`].
pub struct ExpertAgent {
    policy: Option<Box<dyn ExpertPolicy>>,
    pending_end: bool,
    subtask: usize,
    calls: usize,
}

impl ExpertAgent {
    pub fn new() -> Self {
        Self { policy: None, pending_end: false, subtask: 0, calls: 0 }
    }
}

impl Default for ExpertAgent {
    fn default() -> Self {
        Self::new()
    }
}

impl Agent for ExpertAgent {
    fn begin(&mut self, spec: &dyn Task, _obs: &Observation, _seed: u64) -> Result<(), String> {
        self.policy = Some(spec.expert());
        self.calls = 1;
        Ok(())
    }

    fn act(&mut self, _spec: &dyn Task, view: &StepView<'_>) -> Result<AgentStep, String> {
        let p = self.policy.as_mut().ok_or("expert not started")?;
        let s = p.act(view.hidden);
        self.pending_end = s.end_flag;
        self.subtask = s.subtask;
        Ok(AgentStep { action: s.action, subtask: s.subtask })
    }

    fn after_step(&mut self, _spec: &dyn Task, outcome: &StepOutcome<'_>) -> Result<bool, String> {
        if self.pending_end && !outcome.done {
            self.calls += 1;
        }
        Ok(self.pending_end)
    }

    fn planner_calls(&self) -> usize {
        self.calls
    }
}

/// Uniformly random actions; used for chance-level baselines.
pub struct RandomAgent {
    rng: SplitMix64,
}

impl RandomAgent {
    pub fn new() -> Self {
        Self { rng: SplitMix64::new(0) }
    }
}

impl Default for RandomAgent {
    fn default() -> Self {
        Self::new()
    }
}

impl Agent for RandomAgent {
    fn begin(&mut self, _spec: &dyn Task, _obs: &Observation, seed: u64) -> Result<(), String> {
        self.rng = SplitMix64::new(seed).split(0xA6E7);
        Ok(())
    }
    fn act(&mut self, spec: &dyn Task, _view: &StepView<'_>) -> Result<AgentStep, String> {
        let a = self.rng.below(spec.action_count() as u64) as u16;
        Ok(AgentStep { action: ActionId(a), subtask: 0 })
    }
    fn after_step(&mut self, _spec: &dyn Task, _o: &StepOutcome<'_>) -> Result<bool, String> {
        Ok(false)
    }
    fn planner_calls(&self) -> usize {
        1
    }
}
