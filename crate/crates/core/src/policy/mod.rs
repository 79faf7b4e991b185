//! Memory-augmented imitation policy.
//!
//! A planner picks the next subtask from the first frame, a goal embedding
//! and the list of completed subtasks with their end observations. An
//! executor encodes each frame, attends to an anchor latent (the first frame
//! of the current subtask) and to a sliding window of recent latents, and
//! denoises a chunk of relaxed one-hot actions. An end classifier decides
//! when the current subtask is over.

mod agent;
mod model;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::NnError;
use crate::pomdp::Task;

pub use agent::{first_termination, run_episode, EndWindow, Mem0Agent, Mem0State, Override, StepProbe};
pub use model::{ExecSample, Mem0Model, PlanSample, SampleLoss, CLASSIFIER_THRESHOLD};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint sidecar: {0}")]
    Sidecar(#[from] serde_json::Error),
    #[error("invalid policy config: {0}")]
    Config(String),
    #[error("checkpoint built for {expected}, bound to {found}")]
    TaskMismatch { expected: String, found: String },
    #[error("contract violation: {0}")]
    Contract(&'static str),
    #[error(transparent)]
    Engine(#[from] crate::pomdp::PomdpError),
    #[error("task has an empty subtask vocabulary")]
    EmptyVocabulary,
}

/// Mechanism switches. `markovian` implies all the others except
/// `gt_classifier`, and also drops the proprio input and chunk reuse.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablations {
    pub no_anchor: bool,
    pub no_sliding: bool,
    pub no_key: bool,
    pub gt_classifier: bool,
    pub markovian: bool,
}

/// Ablation variants, in report order.
pub const VARIANTS: [&str; 6] = ["vanilla", "no_anchor", "no_sliding", "no_key", "gt_classifier", "markovian"];

impl Ablations {
    pub fn for_variant(name: &str) -> Option<Self> {
        let mut a = Self::default();
        match name {
            "vanilla" => {}
            "no_anchor" => a.no_anchor = true,
            "no_sliding" => a.no_sliding = true,
            "no_key" => a.no_key = true,
            "gt_classifier" => a.gt_classifier = true,
            "markovian" => a.markovian = true,
            _ => return None,
        }
        Some(a)
    }

    pub fn anchor(&self) -> bool {
        !self.no_anchor && !self.markovian
    }

    pub fn sliding(&self) -> bool {
        !self.no_sliding && !self.markovian
    }

    pub fn key(&self) -> bool {
        !self.no_key && !self.markovian
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    /// Action chunk length.
    pub horizon: usize,
    /// Executed prefix of each chunk.
    pub delta: usize,
    /// Sliding window capacity.
    pub sliding_capacity: usize,
    /// Consecutive positive end bits needed to terminate a subtask.
    pub end_window: usize,
    pub d_z: usize,
    /// Tokens produced by the frame encoder before pooling.
    pub tokens: usize,
    pub encoder_hidden: usize,
    pub denoiser_hidden: Vec<usize>,
    pub classifier_hidden: usize,
    pub planner_hidden: usize,
    pub key_dim: usize,
    pub time_embedding: usize,
    pub diffusion_steps: usize,
    pub ablations: Ablations,
    /// Plan over subtasks. `None` follows the task (on for M(n) tasks).
    pub decomposition: Option<bool>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            horizon: 8,
            delta: 4,
            sliding_capacity: 3,
            end_window: 1,
            d_z: 32,
            tokens: 4,
            encoder_hidden: 64,
            denoiser_hidden: vec![128, 128],
            classifier_hidden: 64,
            planner_hidden: 64,
            key_dim: 32,
            time_embedding: 16,
            diffusion_steps: 16,
            ablations: Ablations::default(),
            decomposition: None,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |m: &str| Err(PolicyError::Config(m.to_string()));
        if self.horizon == 0 || self.delta == 0 || self.delta > self.horizon {
            return bad("need 1 <= delta <= horizon");
        }
        if self.sliding_capacity == 0 {
            return bad("sliding capacity must be at least 1");
        }
        if self.end_window == 0 {
            return bad("end window must be at least 1");
        }
        if self.d_z == 0 || self.tokens == 0 || self.key_dim == 0 {
            return bad("latent widths must be positive");
        }
        if self.diffusion_steps == 0 || self.diffusion_steps > crate::nn::BASE_SCHEDULE_STEPS {
            return bad("diffusion steps must be in 1..=1000");
        }
        if self.time_embedding % 2 != 0 {
            return bad("time embedding width must be even");
        }
        Ok(())
    }

    pub fn decomposed(&self, task: &dyn Task) -> bool {
        !self.ablations.markovian && self.decomposition.unwrap_or_else(|| task.decomposed())
    }

    /// Prefix actually executed per chunk.
    pub fn effective_delta(&self) -> usize {
        if self.ablations.markovian { 1 } else { self.delta }
    }
}

/// Task dimensions a model is built for.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskDims {
    pub task: String,
    pub feature_dim: usize,
    pub action_count: usize,
    pub vocab_size: usize,
    pub horizon: usize,
    pub decomposed: bool,
}

impl TaskDims {
    pub fn of(task: &dyn Task, config: &PolicyConfig) -> Result<Self, PolicyError> {
        if task.subtask_vocab().is_empty() {
            return Err(PolicyError::EmptyVocabulary);
        }
        Ok(Self {
            task: task.name().to_string(),
            feature_dim: task.feature_dim(),
            action_count: task.action_count(),
            vocab_size: task.subtask_vocab().len(),
            horizon: task.horizon(),
            decomposed: config.decomposed(task),
        })
    }
}

pub const SIDECAR_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub version: u32,
    pub dims: TaskDims,
    pub config: PolicyConfig,
}

/// Where the JSON sidecar of a weight file lives.
pub fn sidecar_path(weights: &Path) -> PathBuf {
    let mut s = weights.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}
