//! Task memory complexity tooling and a memory-augmented imitation policy
//! for symbolic manipulation tasks.

pub mod harness;
pub mod nn;
pub mod policy;
pub mod pomdp;
pub mod rng;
pub mod tasks;
pub mod tmc;

pub use pomdp::{
    featurize, replay, reset, rollout, step, ActionId, Agent, AgentStep, EpisodeTrace, ExpertAgent, HiddenState,
    Observation, PomdpError, RandomAgent, Task, TaskSpec, TmcLabel,
};
pub use tasks::{build_task, TaskError, TaskParams, TASK_NAMES};
