use std::io::Write;

use super::{streams, ExperimentConfig, HarnessError};
use crate::policy::{Mem0Model, TaskDims};
use crate::pomdp::Task;
use crate::rng::{derive_seed, SplitMix64};
use crate::nn::Adam;
use crate::tasks::DemoSet;

pub const LOSS_LOG_HEADER: &str = "phase,iteration,diffusion_loss,classifier_loss,planner_loss,accuracy";

/// Base seed the demonstration set of an experiment is generated from.
pub fn demo_seed_base(cfg: &ExperimentConfig) -> u64 {
    derive_seed(cfg.seed, streams::DEMOS)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainSummary {
    /// Mean losses over the last logged window.
    pub diffusion_loss: f32,
    pub classifier_loss: f32,
    pub planner_loss: f32,
    /// Training-set accuracy of the end classifier / planner over that window.
    pub end_accuracy: f32,
    pub planner_accuracy: f32,
}

/// Train executor and (for decomposed tasks) planner of one variant.
pub fn train(
    spec: &dyn Task,
    demos: &DemoSet,
    cfg: &ExperimentConfig,
    variant: &str,
    log: &mut dyn Write,
) -> Result<(Mem0Model, TrainSummary), HarnessError> {
    if demos.task != spec.name() {
        return Err(HarnessError::DemoTaskMismatch { demos: demos.task.clone(), task: spec.name().into() });
    }
    let policy = cfg.policy_for(variant)?;
    let dims = TaskDims::of(spec, &policy)?;
    let mut model = Mem0Model::new(dims, policy, derive_seed(cfg.seed, streams::INIT))?;
    writeln!(log, "{LOSS_LOG_HEADER}")?;
    let mut summary = train_executor(&mut model, spec, demos, cfg, log)?;
    if model.dims.decomposed {
        let p = train_planner(&mut model, spec, demos, cfg, log)?;
        summary.planner_loss = p.planner_loss;
        summary.planner_accuracy = p.planner_accuracy;
    }
    Ok((model, summary))
}

/// A model for `variant` that shares `executor`'s executor weights and has a
/// freshly initialized planner.
pub fn with_fresh_planner(executor: &Mem0Model, cfg: &ExperimentConfig, variant: &str) -> Result<Mem0Model, HarnessError> {
    let policy = cfg.policy_for(variant)?;
    let mut model = Mem0Model::new(executor.dims.clone(), policy, derive_seed(cfg.seed, streams::INIT))?;
    model.replace_executor(executor)?;
    Ok(model)
}

struct Window {
    sums: [f64; 3],
    n: usize,
}

impl Window {
    fn new() -> Self {
        Self { sums: [0.0; 3], n: 0 }
    }

    fn add(&mut self, a: f32, b: f32, c: bool) {
        self.sums[0] += a as f64;
        self.sums[1] += b as f64;
        self.sums[2] += if c { 1.0 } else { 0.0 };
        self.n += 1;
    }

    fn mean(&self, i: usize) -> f32 {
        (self.sums[i] / self.n.max(1) as f64) as f32
    }
}

pub fn train_executor(
    model: &mut Mem0Model,
    spec: &dyn Task,
    demos: &DemoSet,
    cfg: &ExperimentConfig,
    log: &mut dyn Write,
) -> Result<TrainSummary, HarnessError> {
    let samples = model.exec_samples(spec, &demos.demos);
    if samples.is_empty() {
        return Err(HarnessError::NoSamples);
    }
    let mut rng = SplitMix64::new(derive_seed(cfg.seed, streams::EXECUTOR_BATCHES));
    let mut adam = Adam::new(cfg.lr_heads);
    let scale = 1.0 / cfg.batch_size as f32;
    let (lr_enc, lr_heads) = (cfg.lr_encoder, cfg.lr_heads);
    let mut window = Window::new();
    let mut summary = TrainSummary::default();
    for it in 0..cfg.iterations {
        for _ in 0..cfg.batch_size {
            let s = &samples[rng.below(samples.len() as u64) as usize];
            let noise = rng.next_u64();
            let l = model
                .exec_loss(s, noise, Some(scale))
                .map_err(|_| HarnessError::Divergence { phase: "executor", iteration: it })?;
            window.add(l.diffusion, l.classifier, l.end_correct);
        }
        if !model.exec_store().grads_finite() {
            return Err(HarnessError::Divergence { phase: "executor", iteration: it });
        }
        adam.step_with(model.exec_store_mut(), |name| if name.starts_with("exec.enc.") { lr_enc } else { lr_heads });
        if (it + 1) % cfg.log_every == 0 || it + 1 == cfg.iterations {
            writeln!(log, "executor,{},{:.6},{:.6},,{:.4}", it + 1, window.mean(0), window.mean(1), window.mean(2))?;
            summary = TrainSummary {
                diffusion_loss: window.mean(0),
                classifier_loss: window.mean(1),
                end_accuracy: window.mean(2),
                ..Default::default()
            };
            window = Window::new();
        }
    }
    Ok(summary)
}

pub fn train_planner(
    model: &mut Mem0Model,
    spec: &dyn Task,
    demos: &DemoSet,
    cfg: &ExperimentConfig,
    log: &mut dyn Write,
) -> Result<TrainSummary, HarnessError> {
    let samples = model.plan_samples(spec, &demos.demos);
    if samples.is_empty() {
        return Err(HarnessError::NoSamples);
    }
    let use_key = model.config.ablations.key();
    let mut rng = SplitMix64::new(derive_seed(cfg.seed, streams::PLANNER_BATCHES));
    let mut adam = Adam::new(cfg.lr_planner);
    let scale = 1.0 / cfg.batch_size as f32;
    let mut window = Window::new();
    let mut summary = TrainSummary::default();
    for it in 0..cfg.planner_iterations {
        for _ in 0..cfg.batch_size {
            let s = &samples[rng.below(samples.len() as u64) as usize];
            let (loss, correct) = model
                .planner_loss(s, use_key, Some(scale))
                .map_err(|_| HarnessError::Divergence { phase: "planner", iteration: it })?;
            window.add(0.0, loss, correct);
        }
        if !model.plan_store().grads_finite() {
            return Err(HarnessError::Divergence { phase: "planner", iteration: it });
        }
        adam.step(model.plan_store_mut());
        if (it + 1) % cfg.log_every == 0 || it + 1 == cfg.planner_iterations {
            writeln!(log, "planner,{},,,{:.6},{:.4}", it + 1, window.mean(1), window.mean(2))?;
            summary = TrainSummary { planner_loss: window.mean(1), planner_accuracy: window.mean(2), ..Default::default() };
            window = Window::new();
        }
    }
    Ok(summary)
}
