use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{streams, HarnessError};
use crate::policy::{Mem0Agent, Mem0Model, PolicyError};
use crate::pomdp::{rollout, Agent, EpisodeTrace, Task};
use crate::rng::derive_seed;

/// One row of results.csv.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub task: String,
    pub variant: String,
    pub successes: usize,
    pub episodes: usize,
    pub success_rate: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
    pub mean_steps: f64,
    pub mean_planner_calls: f64,
    pub seed: u64,
    pub checkpoint_sha256: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub row: ResultRow,
    /// Episodes whose planner-call count differs from completed subtasks + 1.
    pub planner_violations: usize,
    /// Episodes that ended with an agent-side error.
    pub failures: usize,
    pub episode_seeds: Vec<u64>,
}

/// 95% Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054;
    let (n, p) = (n as f64, k as f64 / n as f64);
    let denom = 1.0 + z * z / n;
    let center = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// `n` evaluation seeds derived from the master seed, skipping any seed in `exclude`.
pub fn eval_seeds(master: u64, n: usize, exclude: &HashSet<u64>) -> Vec<u64> {
    let base = derive_seed(master, streams::EVALUATION);
    (0u64..).map(|i| derive_seed(base, i)).filter(|s| !exclude.contains(s)).take(n).collect()
}

/// SHA-256 of the model's weight file contents.
pub fn checkpoint_digest(model: &Mem0Model) -> String {
    hex::encode(Sha256::digest(model.weight_bytes()))
}

/// Seeded closed-loop rollouts of `model` on `spec`.
pub fn evaluate(model: &Mem0Model, spec: &dyn Task, variant: &str, seeds: &[u64], master_seed: u64) -> Result<EvalReport, HarnessError> {
    model.check_task(spec)?;
    evaluate_agent(spec, variant, seeds, master_seed, &checkpoint_digest(model), || Box::new(Mem0Agent::new(model)))
}

/// Seeded rollouts of any agent; `make` builds a fresh agent per episode.
/// Episodes are split over scoped worker threads and aggregated in seed order.
pub fn evaluate_agent<'a>(
    spec: &dyn Task,
    variant: &str,
    seeds: &[u64],
    master_seed: u64,
    digest: &str,
    make: impl Fn() -> Box<dyn Agent + 'a> + Sync,
) -> Result<EvalReport, HarnessError> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(seeds.len()).max(1);
    let per = seeds.len().div_ceil(workers).max(1);
    let run = |chunk: &[u64]| -> Result<Vec<EpisodeTrace>, HarnessError> {
        chunk
            .iter()
            .map(|&seed| {
                let mut agent = make();
                rollout(spec, agent.as_mut(), seed, spec.horizon()).map_err(|e| PolicyError::from(e).into())
            })
            .collect()
    };
    let traces: Vec<EpisodeTrace> = if workers == 1 {
        run(seeds)?
    } else {
        let parts = std::thread::scope(|s| {
            let handles: Vec<_> = seeds.chunks(per).map(|c| s.spawn(move || run(c))).collect();
            handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect::<Vec<_>>()
        });
        parts.into_iter().collect::<Result<Vec<_>, _>>()?.into_iter().flatten().collect()
    };

    let mut successes = 0;
    let (mut steps, mut calls) = (0usize, 0usize);
    let (mut violations, mut failures) = (0, 0);
    for trace in &traces {
        successes += trace.success as usize;
        steps += trace.step_count;
        calls += trace.planner_calls;
        failures += trace.failure.is_some() as usize;
        if trace.planner_calls != trace.completed_subtasks + 1 {
            violations += 1;
        }
    }
    let n = seeds.len();
    let (lo, hi) = wilson_interval(successes, n);
    let row = ResultRow {
        task: spec.name().to_string(),
        variant: variant.to_string(),
        successes,
        episodes: n,
        success_rate: successes as f64 / n.max(1) as f64,
        wilson_lo: lo,
        wilson_hi: hi,
        mean_steps: steps as f64 / n.max(1) as f64,
        mean_planner_calls: calls as f64 / n.max(1) as f64,
        seed: master_seed,
        checkpoint_sha256: digest.to_string(),
    };
    Ok(EvalReport { row, planner_violations: violations, failures, episode_seeds: seeds.to_vec() })
}
