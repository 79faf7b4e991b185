//! Fixtures shared by the criterion benches under `benches/`.

use rmem_core::harness::{demo_seed_base, ExperimentConfig};
use rmem_core::policy::{ExecSample, Mem0Model, PolicyConfig, TaskDims};
use rmem_core::tasks::generate_demos;
use rmem_core::{build_task, TaskParams, TaskSpec};

pub fn task(name: &str) -> TaskSpec {
    build_task(name, &TaskParams::default()).expect("catalog task")
}

/// An untrained model at the default architecture.
pub fn model(spec: &TaskSpec) -> Mem0Model {
    let config = PolicyConfig::default();
    let dims = TaskDims::of(spec.as_ref(), &config).expect("valid dims");
    Mem0Model::new(dims, config, 0).expect("valid config")
}

/// Executor training samples from the default demonstration set.
pub fn exec_samples(spec: &TaskSpec, model: &Mem0Model) -> Vec<ExecSample> {
    let cfg = ExperimentConfig::default();
    let demos = generate_demos(spec.as_ref(), cfg.demos, demo_seed_base(&cfg)).expect("expert succeeds");
    model.exec_samples(spec.as_ref(), &demos.demos)
}
