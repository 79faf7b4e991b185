use std::collections::VecDeque;

use super::{Mem0Model, PolicyConfig, PolicyError};
use crate::pomdp::{featurize, rollout, ActionId, Agent, AgentStep, EpisodeTrace, Observation, StepOutcome, StepView, Task};
use crate::rng::derive_seed;

/// Streaming end-bit window: fires when the last `L` bits are all set, then
/// clears itself so the next firing needs `L` fresh bits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EndWindow {
    len: usize,
    bits: VecDeque<bool>,
}

impl EndWindow {
    pub fn new(len: usize) -> Self {
        assert!(len >= 1, "end window must be at least 1");
        Self { len, bits: VecDeque::with_capacity(len) }
    }

    pub fn push(&mut self, bit: bool) -> bool {
        if self.bits.len() == self.len {
            self.bits.pop_front();
        }
        self.bits.push_back(bit);
        let fired = self.bits.len() == self.len && self.bits.iter().all(|&b| b);
        if fired {
            self.bits.clear();
        }
        fired
    }

    pub fn clear(&mut self) {
        self.bits.clear();
    }

    pub fn bits(&self) -> &VecDeque<bool> {
        &self.bits
    }
}

/// Index of the first step at which an `L`-window over `bits` fires.
pub fn first_termination(bits: &[bool], len: usize) -> Option<usize> {
    let mut w = EndWindow::new(len);
    bits.iter().position(|&b| w.push(b))
}

/// Per-episode memory and bookkeeping.
#[derive(Clone, Debug)]
pub struct Mem0State {
    pub anchor: Option<Vec<f32>>,
    pub sliding: VecDeque<Vec<f32>>,
    pub key: Vec<(usize, Vec<f32>)>,
    pub end_bits: EndWindow,
    pub subtask: usize,
    pub planner_calls: usize,
    pub step_in_subtask: usize,
    pub queue: VecDeque<ActionId>,
    pub last_action: Option<ActionId>,
    pub denoiser_calls: usize,
    capacity: usize,
    fresh: bool,
    pending_bit: bool,
    o0: Vec<f32>,
}

impl Mem0State {
    pub fn new(config: &PolicyConfig) -> Self {
        Self {
            anchor: None,
            sliding: VecDeque::with_capacity(config.sliding_capacity + 1),
            key: Vec::new(),
            end_bits: EndWindow::new(config.end_window),
            subtask: 0,
            planner_calls: 0,
            step_in_subtask: 0,
            queue: VecDeque::new(),
            last_action: None,
            denoiser_calls: 0,
            capacity: config.sliding_capacity,
            fresh: true,
            pending_bit: false,
            o0: Vec::new(),
        }
    }

    pub fn buffers_empty(&self) -> bool {
        self.anchor.is_none() && self.sliding.is_empty()
    }

    /// Empty the anchor, the sliding window, the end bits and the action queue.
    pub fn reset_buffers(&mut self) {
        self.anchor = None;
        self.sliding.clear();
        self.end_bits.clear();
        self.queue.clear();
    }

    pub fn begin_subtask(&mut self, z_first: Vec<f32>) -> Result<(), PolicyError> {
        if !self.buffers_empty() {
            return Err(PolicyError::Contract("begin_subtask with nonempty memory buffers"));
        }
        self.anchor = Some(z_first);
        self.step_in_subtask = 0;
        self.end_bits.clear();
        Ok(())
    }

    pub fn update_sliding(&mut self, z: Vec<f32>) {
        self.sliding.push_back(z);
        while self.sliding.len() > self.capacity {
            self.sliding.pop_front();
        }
    }
}

/// Diagnostic overrides that keep a buffer physically empty.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Override {
    pub empty_anchor: bool,
    pub empty_sliding: bool,
}

/// What the agent saw and decided at one control step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepProbe {
    pub t: usize,
    pub subtask: usize,
    pub anchor: Option<Vec<f32>>,
    pub sliding_len: usize,
    pub cond: Vec<f32>,
    pub action: ActionId,
    pub end_bit: bool,
    /// Set by `after_step`.
    pub terminated: bool,
    /// Buffers and end bits were empty right after a termination.
    pub reset_clean: bool,
}

/// Closed-loop policy over a bound model.
pub struct Mem0Agent<'m> {
    model: &'m Mem0Model,
    state: Mem0State,
    seed: u64,
    overrides: Override,
    probes: Option<Vec<StepProbe>>,
    greedy: bool,
}

impl<'m> Mem0Agent<'m> {
    pub fn new(model: &'m Mem0Model) -> Self {
        Self { model, state: Mem0State::new(&model.config), seed: 0, overrides: Override::default(), probes: None, greedy: false }
    }

    pub fn with_overrides(mut self, overrides: Override) -> Self {
        self.overrides = overrides;
        self
    }

    /// Decode chunks with the noise-free sampler instead of seeded sampling.
    pub fn greedy(mut self) -> Self {
        self.greedy = true;
        self
    }

    pub fn with_probes(mut self) -> Self {
        self.probes = Some(Vec::new());
        self
    }

    pub fn state(&self) -> &Mem0State {
        &self.state
    }

    pub fn probes(&self) -> &[StepProbe] {
        self.probes.as_deref().unwrap_or(&[])
    }

    fn decomposed(&self) -> bool {
        self.model.dims.decomposed
    }

    fn replan(&mut self) -> Result<(), PolicyError> {
        self.state.planner_calls += 1;
        self.state.subtask = if self.decomposed() {
            self.model.plan(&self.state.o0, &self.state.key, self.model.config.ablations.key())?
        } else {
            0
        };
        self.state.fresh = true;
        Ok(())
    }

    fn act_inner(&mut self, spec: &dyn Task, view: &StepView<'_>) -> Result<AgentStep, PolicyError> {
        let m = self.model;
        let ab = m.config.ablations;
        let z = m.encode(&featurize(spec, view.obs))?;
        if self.state.fresh {
            if self.overrides.empty_anchor {
                self.state.step_in_subtask = 0;
                self.state.end_bits.clear();
            } else {
                self.state.begin_subtask(z.clone())?;
            }
            self.state.fresh = false;
        }
        let anchor: Vec<Vec<f32>> = if ab.anchor() { self.state.anchor.iter().cloned().collect() } else { Vec::new() };
        let sliding: Vec<Vec<f32>> = if ab.sliding() { self.state.sliding.iter().cloned().collect() } else { Vec::new() };
        let mut cond = m.fuse(&z, &anchor, &sliding, m.text_id(self.state.subtask))?;
        cond.extend(m.proprio(self.state.last_action, self.state.step_in_subtask));
        let bit = m.classify_end(&cond)?;
        self.state.pending_bit = bit;
        if self.state.queue.is_empty() {
            let chunk = if self.greedy {
                m.sample_chunk_greedy(&cond)?
            } else {
                m.sample_chunk(&cond, derive_seed(self.seed, view.t as u64))?
            };
            self.state.denoiser_calls += 1;
            self.state.queue.extend(m.decode_chunk(&chunk).into_iter().take(m.config.effective_delta()));
        }
        let action = self.state.queue.pop_front().expect("queue refilled above");
        if !self.overrides.empty_sliding {
            self.state.update_sliding(z);
        }
        if let Some(p) = &mut self.probes {
            p.push(StepProbe {
                t: view.t,
                subtask: self.state.subtask,
                anchor: self.state.anchor.clone(),
                sliding_len: self.state.sliding.len(),
                cond,
                action,
                end_bit: bit,
                terminated: false,
                reset_clean: false,
            });
        }
        Ok(AgentStep { action, subtask: self.state.subtask })
    }

    fn after_inner(&mut self, spec: &dyn Task, o: &StepOutcome<'_>) -> Result<bool, PolicyError> {
        self.state.last_action = Some(o.action);
        self.state.step_in_subtask += 1;
        if !self.decomposed() {
            return Ok(false);
        }
        let terminated = if self.model.config.ablations.gt_classifier {
            spec.completes_subtask(self.state.subtask, o.before, o.action, o.after)
        } else {
            self.state.end_bits.push(self.state.pending_bit)
        };
        if terminated && !o.done {
            self.state.key.push((self.state.subtask, featurize(spec, o.next_obs)));
            self.state.reset_buffers();
            self.replan()?;
        }
        if let Some(p) = self.probes.as_mut().and_then(|p| p.last_mut()) {
            p.terminated = terminated;
            p.reset_clean = self.state.buffers_empty() && self.state.end_bits.bits().is_empty() && self.state.queue.is_empty();
        }
        Ok(terminated)
    }
}

impl Agent for Mem0Agent<'_> {
    fn begin(&mut self, spec: &dyn Task, obs: &Observation, seed: u64) -> Result<(), String> {
        self.model.check_task(spec).map_err(|e| e.to_string())?;
        self.state = Mem0State::new(&self.model.config);
        self.seed = seed;
        self.state.o0 = featurize(spec, obs);
        if let Some(p) = &mut self.probes {
            p.clear();
        }
        self.replan().map_err(|e| e.to_string())
    }

    fn act(&mut self, spec: &dyn Task, view: &StepView<'_>) -> Result<AgentStep, String> {
        self.act_inner(spec, view).map_err(|e| e.to_string())
    }

    fn after_step(&mut self, spec: &dyn Task, outcome: &StepOutcome<'_>) -> Result<bool, String> {
        self.after_inner(spec, outcome).map_err(|e| e.to_string())
    }

    fn planner_calls(&self) -> usize {
        self.state.planner_calls
    }
}

/// One closed-loop episode over the task's full horizon.
pub fn run_episode(model: &Mem0Model, spec: &dyn Task, seed: u64) -> Result<EpisodeTrace, PolicyError> {
    let mut agent = Mem0Agent::new(model);
    Ok(rollout(spec, &mut agent, seed, spec.horizon())?)
}
