//! Experiment configuration and its flat `key = value` file format.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Unknown keys are errors. `configs/experiment.cfg` documents every key.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{Ablations, PolicyConfig};
use crate::tasks::TaskParams;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {value}")]
    BadValue { key: String, value: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: String,
    pub task_params: TaskParams,
    pub policy: PolicyConfig,
    pub variant: String,
    pub demos: usize,
    pub episodes: usize,
    pub iterations: usize,
    pub planner_iterations: usize,
    pub batch_size: usize,
    pub lr_heads: f64,
    pub lr_encoder: f64,
    pub lr_planner: f64,
    pub seed: u64,
    pub out: PathBuf,
    /// Loss-log period in iterations.
    pub log_every: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: "put_back_block".into(),
            task_params: TaskParams::default(),
            policy: PolicyConfig::default(),
            variant: "vanilla".into(),
            demos: 50,
            episodes: 100,
            iterations: 5000,
            planner_iterations: 2000,
            batch_size: 64,
            lr_heads: 1e-3,
            lr_encoder: 1e-3,
            lr_planner: 1e-3,
            seed: 0,
            out: PathBuf::from("runs"),
            log_every: 50,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue { key: key.into(), value: value.into() })
}

fn flag(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(ConfigError::BadValue { key: key.into(), value: value.into() }),
    }
}

fn opt_num(key: &str, value: &str) -> Result<Option<usize>, ConfigError> {
    if value == "default" { Ok(None) } else { num(key, value).map(Some) }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line: i + 1, message: format!("expected `key = value`, got `{line}`") })?;
            cfg.set(k.trim(), v.trim()).map_err(|e| match e {
                ConfigError::UnknownKey(_) | ConfigError::BadValue { .. } => ConfigError::Syntax { line: i + 1, message: e.to_string() },
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply one setting; command-line flags use the same keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let p = &mut self.policy;
        let tp = &mut self.task_params;
        match key {
            "task" => self.task = value.into(),
            "size" => tp.size = opt_num(key, value)?,
            "orientations" => tp.orientations = opt_num(key, value)?,
            "max_digit" => tp.max_digit = opt_num(key, value)?,
            "attempt_slack" => tp.attempt_slack = opt_num(key, value)?,
            "task_horizon" => tp.horizon = opt_num(key, value)?,
            "chunk_horizon" => p.horizon = num(key, value)?,
            "delta" => p.delta = num(key, value)?,
            "sliding_capacity" => p.sliding_capacity = num(key, value)?,
            "end_window" => p.end_window = num(key, value)?,
            "d_z" => p.d_z = num(key, value)?,
            "tokens" => p.tokens = num(key, value)?,
            "encoder_hidden" => p.encoder_hidden = num(key, value)?,
            "denoiser_hidden" => {
                p.denoiser_hidden = value.split(',').map(|s| num(key, s.trim())).collect::<Result<_, _>>()?;
            }
            "classifier_hidden" => p.classifier_hidden = num(key, value)?,
            "planner_hidden" => p.planner_hidden = num(key, value)?,
            "key_dim" => p.key_dim = num(key, value)?,
            "time_embedding" => p.time_embedding = num(key, value)?,
            "diffusion_steps" => p.diffusion_steps = num(key, value)?,
            "decomposition" => {
                p.decomposition = match value {
                    "auto" => None,
                    v => Some(flag(key, v)?),
                }
            }
            "variant" => {
                Ablations::for_variant(value).ok_or_else(|| ConfigError::BadValue { key: key.into(), value: value.into() })?;
                self.variant = value.into();
            }
            "demos" => self.demos = num(key, value)?,
            "episodes" => self.episodes = num(key, value)?,
            "iterations" => self.iterations = num(key, value)?,
            "planner_iterations" => self.planner_iterations = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "lr_heads" => self.lr_heads = num(key, value)?,
            "lr_encoder" => self.lr_encoder = num(key, value)?,
            "lr_planner" => self.lr_planner = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "log_every" => self.log_every = num(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        if self.demos == 0 {
            return bad("demos must be at least 1");
        }
        if self.episodes == 0 {
            return bad("episodes must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.log_every == 0 {
            return bad("log_every must be at least 1");
        }
        for lr in [self.lr_heads, self.lr_encoder, self.lr_planner] {
            if !(lr.is_finite() && lr > 0.0) {
                return bad("learning rates must be positive");
            }
        }
        self.policy.validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Policy config with the selected variant's switches applied.
    pub fn policy_for(&self, variant: &str) -> Result<PolicyConfig, ConfigError> {
        let ablations =
            Ablations::for_variant(variant).ok_or_else(|| ConfigError::BadValue { key: "variant".into(), value: variant.into() })?;
        Ok(PolicyConfig { ablations, ..self.policy.clone() })
    }
}
