//! Small random-init policies and an episode checker for the memory mechanism.
#![allow(dead_code)]

pub mod gradcheck;

use rmem_core::policy::{Ablations, Mem0Agent, Mem0Model, PolicyConfig, TaskDims};
use std::collections::{HashSet, VecDeque};

use rmem_core::pomdp::{replay, rollout, ActionId, HiddenState, Task};
use rmem_core::rng::SplitMix64;

pub fn stub_config(variant: &str) -> PolicyConfig {
    PolicyConfig {
        d_z: 8,
        tokens: 2,
        encoder_hidden: 16,
        denoiser_hidden: vec![16],
        classifier_hidden: 8,
        planner_hidden: 8,
        key_dim: 8,
        time_embedding: 4,
        diffusion_steps: 4,
        ablations: Ablations::for_variant(variant).expect("known variant"),
        ..PolicyConfig::default()
    }
}

/// A random-init model whose end-classifier output bias is redrawn from
/// [-3, 3], so termination rates vary from model to model.
pub fn stub_model(spec: &dyn Task, config: PolicyConfig, seed: u64) -> Mem0Model {
    let dims = TaskDims::of(spec, &config).unwrap();
    let mut model = Mem0Model::new(dims, config, seed).unwrap();
    let store = model.exec_store_mut();
    let id = store.id("exec.clf.1.b").expect("classifier output bias");
    let mut rng = SplitMix64::new(seed).split(17);
    store.value_mut(id)[0] = rng.uniform(-3.0, 3.0) as f32;
    model
}

#[derive(Debug, Default)]
pub struct EpisodeStats {
    pub steps: usize,
    pub terminations: usize,
    pub planner_calls: usize,
}

/// Roll out one probed episode and check every memory invariant. Returns
/// a description of the first violation.
pub fn check_episode(model: &Mem0Model, spec: &dyn Task, seed: u64) -> Result<EpisodeStats, String> {
    let cfg = &model.config;
    let ab = cfg.ablations;
    let mut agent = Mem0Agent::new(model).with_probes();
    let trace = rollout(spec, &mut agent, seed, spec.horizon()).map_err(|e| e.to_string())?;
    if let Some(f) = &trace.failure {
        return Err(format!("agent failure: {f}"));
    }
    if trace.planner_calls != trace.completed_subtasks + 1 {
        return Err(format!("planner calls {} vs completed {}", trace.planner_calls, trace.completed_subtasks));
    }
    let probes = agent.probes();
    if probes.len() != trace.step_count {
        return Err(format!("{} probes for {} steps", probes.len(), trace.step_count));
    }
    let states = replay(spec, &trace).map_err(|e| e.to_string())?;
    let mut segment_anchor: Option<&Option<Vec<f32>>> = None;
    let mut terminations = 0;
    for (i, p) in probes.iter().enumerate() {
        if p.sliding_len > cfg.sliding_capacity {
            return Err(format!("t={}: sliding window holds {}", p.t, p.sliding_len));
        }
        if ab.anchor() && p.anchor.is_none() {
            return Err(format!("t={}: anchor missing", p.t));
        }
        match segment_anchor {
            None => segment_anchor = Some(&p.anchor),
            Some(a) if a != &p.anchor => return Err(format!("t={}: anchor changed inside a subtask", p.t)),
            _ => {}
        }
        if !model.dims.decomposed && p.terminated {
            return Err(format!("t={}: undecomposed episode terminated a subtask", p.t));
        }
        if p.terminated {
            terminations += 1;
            let last = i + 1 == probes.len();
            if !last {
                if !p.reset_clean {
                    return Err(format!("t={}: buffers not empty after termination", p.t));
                }
                segment_anchor = None;
            }
        } else if let Some(next) = probes.get(i + 1) {
            if next.subtask != p.subtask {
                return Err(format!("t={}: subtask changed without a termination", p.t));
            }
        }
        if ab.gt_classifier && model.dims.decomposed {
            let gt = spec.completes_subtask(p.subtask, &states[i], p.action, &states[i + 1]);
            if gt != p.terminated {
                return Err(format!("t={}: ground-truth termination {gt}, agent {}", p.t, p.terminated));
            }
        }
        if !ab.gt_classifier && model.dims.decomposed && cfg.end_window == 1 && p.terminated != p.end_bit {
            return Err(format!("t={}: L=1 termination disagrees with the end bit", p.t));
        }
    }
    Ok(EpisodeStats { steps: trace.step_count, terminations, planner_calls: trace.planner_calls })
}

/// Every state reachable from the initial support under any action sequence.
pub fn reachable(spec: &dyn Task) -> Vec<HiddenState> {
    let mut seen: HashSet<HiddenState> = HashSet::new();
    let mut queue: VecDeque<HiddenState> = spec.initial_states().into();
    let mut out = Vec::new();
    while let Some(s) = queue.pop_front() {
        if !seen.insert(s.clone()) {
            continue;
        }
        for a in 0..spec.action_count() {
            queue.push_back(spec.transition(&s, ActionId(a as u16)));
        }
        out.push(s);
    }
    out
}
