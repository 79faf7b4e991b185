use std::collections::HashSet;
use std::path::Path;

use super::train::{demo_seed_base, train, train_planner, with_fresh_planner, TrainSummary, LOSS_LOG_HEADER};
use super::{eval_seeds, evaluate, EvalReport, ExperimentConfig, HarnessError, ResultRow};
use crate::policy::Mem0Model;
use crate::pomdp::{Task, TmcLabel};
use crate::tasks::generate_demos;

/// Variants evaluated for a task with the given memory label.
pub fn variants_for(label: TmcLabel) -> Vec<&'static str> {
    match label {
        TmcLabel::Mn => vec!["vanilla", "no_anchor", "no_sliding", "no_key", "gt_classifier", "markovian"],
        _ => vec!["vanilla", "no_anchor", "no_sliding", "markovian"],
    }
}

pub struct VariantRun {
    pub variant: String,
    pub model: Mem0Model,
    pub summary: TrainSummary,
    pub report: EvalReport,
}

/// Train and evaluate `variants` on shared demonstrations and evaluation
/// seeds. `gt_classifier` reuses the vanilla weights; `no_key` reuses the
/// vanilla executor and retrains only the planner. With `out`, checkpoints
/// and loss logs are written under `out/<task>/`.
pub fn run_variants(spec: &dyn Task, cfg: &ExperimentConfig, variants: &[&str], out: Option<&Path>) -> Result<Vec<VariantRun>, HarnessError> {
    cfg.validate()?;
    let demos = generate_demos(spec, cfg.demos, demo_seed_base(cfg))?;
    let exclude: HashSet<u64> = demos.demos.iter().map(|d| d.seed).collect();
    let seeds = eval_seeds(cfg.seed, cfg.episodes, &exclude);
    let dir = out.map(|o| o.join(spec.name()));
    if let Some(d) = &dir {
        std::fs::create_dir_all(d)?;
    }

    let mut vanilla: Option<(Mem0Model, TrainSummary)> = None;
    let mut runs = Vec::new();
    for &variant in variants {
        cfg.policy_for(variant)?;
        let mut log = Vec::new();
        let needs_vanilla = matches!(variant, "vanilla" | "gt_classifier" | "no_key");
        if needs_vanilla && vanilla.is_none() {
            let mut vlog = Vec::new();
            vanilla = Some(train(spec, &demos, cfg, "vanilla", &mut vlog)?);
            if let Some(d) = &dir {
                std::fs::write(d.join("vanilla_loss.csv"), &vlog)?;
            }
        }
        let (model, summary) = match variant {
            "vanilla" => vanilla.clone().expect("trained above"),
            "gt_classifier" => {
                let (mut m, s) = vanilla.clone().expect("trained above");
                m.config.ablations = cfg.policy_for(variant)?.ablations;
                (m, s)
            }
            "no_key" => {
                let (base, s) = vanilla.as_ref().expect("trained above");
                let mut m = with_fresh_planner(base, cfg, variant)?;
                let mut summary = s.clone();
                if m.dims.decomposed {
                    writeln_header(&mut log)?;
                    let p = train_planner(&mut m, spec, &demos, cfg, &mut log)?;
                    summary.planner_loss = p.planner_loss;
                    summary.planner_accuracy = p.planner_accuracy;
                }
                (m, summary)
            }
            other => train(spec, &demos, cfg, other, &mut log)?,
        };
        if let Some(d) = &dir {
            model.save(&d.join(format!("{variant}.mem0")))?;
            if !log.is_empty() {
                std::fs::write(d.join(format!("{variant}_loss.csv")), &log)?;
            }
        }
        let report = evaluate(&model, spec, variant, &seeds, cfg.seed)?;
        runs.push(VariantRun { variant: variant.to_string(), model, summary, report });
    }
    Ok(runs)
}

fn writeln_header(log: &mut Vec<u8>) -> std::io::Result<()> {
    use std::io::Write;
    writeln!(log, "{LOSS_LOG_HEADER}")
}

/// The full variant matrix for one task.
pub fn ablate(spec: &dyn Task, cfg: &ExperimentConfig, out: Option<&Path>) -> Result<Vec<ResultRow>, HarnessError> {
    let variants = variants_for(spec.tmc_label());
    Ok(run_variants(spec, cfg, &variants, out)?.into_iter().map(|r| r.report.row).collect())
}
