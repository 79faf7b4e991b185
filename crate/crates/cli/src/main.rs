//! `rmem`: generate demonstrations, train and evaluate policies, run the
//! ablation matrix, certify task memory complexity, and render reports.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rmem_core::harness::{
    ablate, default_expectations, demo_seed_base, eval_seeds, evaluate, read_rows_csv, train, write_report, ExperimentConfig,
    ResultRow,
};
use rmem_core::policy::{Ablations, Mem0Model, VARIANTS};
use rmem_core::tasks::{generate_demos, load_demoset, save_demoset, DemoSet};
use rmem_core::tmc::{compute_tmc, TmcConfig};
use rmem_core::{build_task, TaskSpec, TASK_NAMES};

#[derive(Parser)]
#[command(name = "rmem", version, about = "Memory-dependent manipulation tasks, memory oracle and memory-augmented policy")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate scripted demonstrations.
    Gen(Common),
    /// Train one policy variant.
    Train(Common),
    /// Evaluate a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Weight file written by `train` (its `.json` sidecar must sit next to it).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate every ablation variant for the task (`--task all` for the catalog).
    Ablate(Common),
    /// Compute the task memory complexity of a task.
    Tmc {
        #[command(flatten)]
        common: Common,
        /// Largest slot count to try.
        #[arg(long, default_value_t = 2)]
        m_max: usize,
    },
    /// Render a summary from an existing results.csv.
    Report {
        #[command(flatten)]
        common: Common,
        /// results.csv to read; defaults to `<out>/results.csv`.
        #[arg(long)]
        rows: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    task: Option<String>,
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    demos: Option<usize>,
    #[arg(long)]
    variant: Option<String>,
    /// Extra `key=value` override using config-file keys; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                ExperimentConfig::parse(&text).with_context(|| format!("in {}", p.display()))?
            }
            None => ExperimentConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| anyhow!("--set expects KEY=VALUE, got `{kv}`"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(t) = &self.task {
            cfg.task = t.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(e) = self.episodes {
            cfg.episodes = e;
        }
        if let Some(d) = self.demos {
            cfg.demos = d;
        }
        if let Some(v) = &self.variant {
            cfg.set("variant", v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn task_of(cfg: &ExperimentConfig) -> Result<TaskSpec> {
    Ok(build_task(&cfg.task, &cfg.task_params)?)
}

fn task_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out.join(&cfg.task)
}

fn demos_path(cfg: &ExperimentConfig) -> PathBuf {
    task_dir(cfg).join("demos.rmbd")
}

/// Saved demonstrations when they match the config, otherwise a fresh set.
fn demos_for(spec: &TaskSpec, cfg: &ExperimentConfig) -> Result<DemoSet> {
    let path = demos_path(cfg);
    if path.exists() {
        let set = load_demoset(&path).with_context(|| format!("reading {}", path.display()))?;
        if set.task == spec.name() && set.demos.len() == cfg.demos && set.meta.base_seed == demo_seed_base(cfg) {
            return Ok(set);
        }
        eprintln!("{} was generated with other settings; regenerating in memory", path.display());
    }
    Ok(generate_demos(spec.as_ref(), cfg.demos, demo_seed_base(cfg))?)
}

fn gen(cfg: &ExperimentConfig) -> Result<()> {
    let spec = task_of(cfg)?;
    let set = generate_demos(spec.as_ref(), cfg.demos, demo_seed_base(cfg))?;
    let path = demos_path(cfg);
    fs::create_dir_all(task_dir(cfg)).with_context(|| format!("creating {}", task_dir(cfg).display()))?;
    save_demoset(&set, &path).with_context(|| format!("writing {}", path.display()))?;
    let steps: usize = set.demos.iter().map(|d| d.steps.len()).sum();
    println!("wrote {} demonstrations ({steps} steps) to {}", set.demos.len(), path.display());
    Ok(())
}

fn train_cmd(cfg: &ExperimentConfig) -> Result<()> {
    let spec = task_of(cfg)?;
    let demos = demos_for(&spec, cfg)?;
    let dir = task_dir(cfg);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut log = Vec::new();
    let (model, summary) = train(spec.as_ref(), &demos, cfg, &cfg.variant, &mut log)?;
    let ckpt = dir.join(format!("{}.mem0", cfg.variant));
    model.save(&ckpt).with_context(|| format!("writing {}", ckpt.display()))?;
    fs::write(dir.join(format!("{}_loss.csv", cfg.variant)), log)?;
    println!("{}", serde_json::to_string(&serde_json::json!({
        "checkpoint": ckpt,
        "diffusion_loss": summary.diffusion_loss,
        "classifier_loss": summary.classifier_loss,
        "end_accuracy": summary.end_accuracy,
        "planner_accuracy": summary.planner_accuracy,
    }))?);
    Ok(())
}

fn variant_of(ablations: &Ablations) -> Option<&'static str> {
    VARIANTS.into_iter().find(|v| Ablations::for_variant(v).as_ref() == Some(ablations))
}

fn eval_cmd(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<()> {
    let ckpt = checkpoint.ok_or_else(|| anyhow!("eval needs --checkpoint <path> (written by `rmem train`)"))?;
    let mut model = Mem0Model::load(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let spec = task_of(cfg)?;
    model.check_task(spec.as_ref())?;
    let trained = variant_of(&model.config.ablations).unwrap_or("custom");
    let variant = if cfg.variant == "gt_classifier" && trained == "vanilla" {
        model.config.ablations.gt_classifier = true;
        "gt_classifier"
    } else if cfg.variant == trained || cfg.variant == "vanilla" {
        trained
    } else {
        bail!("checkpoint was trained as `{trained}`; only a vanilla checkpoint can be evaluated as `{}`", cfg.variant);
    };
    let demos = demos_for(&spec, cfg)?;
    let exclude: HashSet<u64> = demos.demos.iter().map(|d| d.seed).collect();
    let seeds = eval_seeds(cfg.seed, cfg.episodes, &exclude);
    let report = evaluate(&model, spec.as_ref(), variant, &seeds, cfg.seed)?;
    let dir = task_dir(cfg).join(format!("eval_{variant}"));
    let rows = vec![report.row];
    write_report(&dir, &rows, cfg, &[]).with_context(|| format!("writing {}", dir.display()))?;
    println!("{}", serde_json::to_string(&rows[0])?);
    Ok(())
}

fn ablate_cmd(cfg: &ExperimentConfig) -> Result<()> {
    let tasks: Vec<String> = if cfg.task == "all" { TASK_NAMES.iter().map(|s| s.to_string()).collect() } else { vec![cfg.task.clone()] };
    let mut rows: Vec<ResultRow> = Vec::new();
    for name in &tasks {
        let task_cfg = ExperimentConfig { task: name.clone(), ..cfg.clone() };
        let spec = task_of(&task_cfg)?;
        eprintln!("ablating {name}");
        let task_rows = ablate(spec.as_ref(), &task_cfg, Some(&cfg.out))?;
        for r in &task_rows {
            eprintln!("  {:<14} {}/{}", r.variant, r.successes, r.episodes);
        }
        rows.extend(task_rows);
    }
    let names: Vec<&str> = tasks.iter().map(String::as_str).collect();
    write_report(&cfg.out, &rows, cfg, &default_expectations(&names))?;
    println!("wrote {}", cfg.out.join("summary.md").display());
    Ok(())
}

fn tmc_cmd(cfg: &ExperimentConfig, m_max: usize) -> Result<()> {
    let spec = task_of(cfg)?;
    let result = compute_tmc(spec.as_ref(), &TmcConfig { m_max, ..TmcConfig::default() })?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{}", serde_json::to_string_pretty(&result)?)?;
    Ok(())
}

fn report_cmd(cfg: &ExperimentConfig, rows: Option<&Path>) -> Result<()> {
    let path = rows.map(Path::to_path_buf).unwrap_or_else(|| cfg.out.join("results.csv"));
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let rows = read_rows_csv(&text)?;
    let mut tasks: Vec<&str> = rows.iter().map(|r| r.task.as_str()).collect();
    tasks.dedup();
    write_report(&cfg.out, &rows, cfg, &default_expectations(&tasks))?;
    println!("wrote {}", cfg.out.join("summary.md").display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(c) => gen(&c.config()?),
        Command::Train(c) => train_cmd(&c.config()?),
        Command::Eval { common, checkpoint } => eval_cmd(&common.config()?, checkpoint.as_deref()),
        Command::Ablate(c) => ablate_cmd(&c.config()?),
        Command::Tmc { common, m_max } => tmc_cmd(&common.config()?, m_max),
        Command::Report { common, rows } => report_cmd(&common.config()?, rows.as_deref()),
    }
}

/// The cause chain joined with `: `, skipping causes whose text the
/// previous message already contains.
fn render(err: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if parts.last().is_some_and(|p| p.contains(&msg)) {
            continue;
        }
        parts.push(msg);
    }
    parts.join(": ")
}

/// 2 when any cause in the chain is an I/O failure, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|c| c.downcast_ref::<std::io::Error>().is_some()) { 2 } else { 1 }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
