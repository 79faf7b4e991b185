//! Expert demonstrations and the `RMBD` demo-set file format.
//!
//! Layout: magic `RMBD`, u16 LE version, u16 LE name length, task name
//! bytes, u32 LE demonstration count, then a JSON-lines body (one metadata
//! line, then one line per demonstration), then the CRC32 of the body as
//! u32 LE.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pomdp::{rollout, ActionId, ExpertAgent, Observation, PomdpError, Task};
use crate::rng::derive_seed;

pub const DEMO_MAGIC: &[u8; 4] = b"RMBD";
pub const DEMO_VERSION: u16 = 1;
pub const GENERATOR_VERSION: &str = concat!("rmem-core ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not a demo-set file")]
    BadMagic,
    #[error("demo-set version {found} unsupported (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed demo-set: {0}")]
    Malformed(String),
    #[error("engine: {0}")]
    Engine(#[from] PomdpError),
    #[error("expert failed on {task} seed {seed}")]
    ExpertFailed { task: String, seed: u64 },
    #[error("demo count must be at least 1")]
    EmptyRequest,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoStep {
    pub obs: Observation,
    pub action: ActionId,
    pub subtask: usize,
    pub end_flag: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub task: String,
    pub seed: u64,
    pub steps: Vec<DemoStep>,
    /// Observation after the last action.
    pub final_obs: Observation,
}

impl Demonstration {
    /// Observation seen after step `t`.
    pub fn next_obs(&self, t: usize) -> &Observation {
        self.steps.get(t + 1).map(|s| &s.obs).unwrap_or(&self.final_obs)
    }

    pub fn subtask_count(&self) -> usize {
        self.steps.iter().filter(|s| s.end_flag).count()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoMeta {
    pub generator: String,
    pub base_seed: u64,
    /// Derived-seed stream indices `[first, last)`.
    pub seed_range: (u64, u64),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DemoSet {
    pub task: String,
    pub meta: DemoMeta,
    pub demos: Vec<Demonstration>,
}

/// `n` successful expert traces under seeds derived from `seed`.
pub fn generate_demos(spec: &dyn Task, n: usize, seed: u64) -> Result<DemoSet, DemoError> {
    if n == 0 {
        return Err(DemoError::EmptyRequest);
    }
    let mut demos = Vec::with_capacity(n);
    for i in 0..n as u64 {
        let s = derive_seed(seed, i);
        let mut agent = ExpertAgent::new();
        let trace = rollout(spec, &mut agent, s, spec.horizon())?;
        if !trace.success {
            return Err(DemoError::ExpertFailed { task: spec.name().to_string(), seed: s });
        }
        let final_obs = crate::pomdp::replay(spec, &trace)?
            .last()
            .map(|h| spec.observe(h))
            .expect("replay yields the initial state");
        let steps = trace
            .steps
            .into_iter()
            .map(|t| DemoStep { obs: t.obs, action: t.action, subtask: t.subtask, end_flag: t.end_flag })
            .collect();
        demos.push(Demonstration { task: spec.name().to_string(), seed: s, steps, final_obs });
    }
    Ok(DemoSet {
        task: spec.name().to_string(),
        meta: DemoMeta { generator: GENERATOR_VERSION.to_string(), base_seed: seed, seed_range: (0, n as u64) },
        demos,
    })
}

pub fn encode_demoset(set: &DemoSet) -> Result<Vec<u8>, DemoError> {
    let mut body = Vec::new();
    serde_json::to_writer(&mut body, &set.meta).map_err(io::Error::from)?;
    body.push(b'\n');
    for d in &set.demos {
        serde_json::to_writer(&mut body, d).map_err(io::Error::from)?;
        body.push(b'\n');
    }
    let name = set.task.as_bytes();
    let mut out = Vec::with_capacity(body.len() + name.len() + 16);
    out.extend_from_slice(DEMO_MAGIC);
    out.extend_from_slice(&DEMO_VERSION.to_le_bytes());
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name);
    out.extend_from_slice(&(set.demos.len() as u32).to_le_bytes());
    out.extend_from_slice(&body);
    out.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
    Ok(out)
}

pub fn decode_demoset(bytes: &[u8]) -> Result<DemoSet, DemoError> {
    let short = || DemoError::Malformed("file too short".into());
    if bytes.len() < 8 {
        return Err(short());
    }
    if &bytes[..4] != DEMO_MAGIC {
        return Err(DemoError::BadMagic);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != DEMO_VERSION {
        return Err(DemoError::VersionMismatch { found: version, expected: DEMO_VERSION });
    }
    let name_len = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let body_start = 8 + name_len + 4;
    if bytes.len() < body_start + 4 {
        return Err(short());
    }
    let task = String::from_utf8(bytes[8..8 + name_len].to_vec()).map_err(|e| DemoError::Malformed(e.to_string()))?;
    let count = u32::from_le_bytes(bytes[8 + name_len..body_start].try_into().expect("4 bytes")) as usize;
    let body = &bytes[body_start..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(DemoError::Checksum { stored, computed });
    }
    let text = std::str::from_utf8(body).map_err(|e| DemoError::Malformed(e.to_string()))?;
    let mut lines = text.lines();
    let meta_line = lines.next().ok_or_else(|| DemoError::Malformed("missing metadata".into()))?;
    let meta: DemoMeta = serde_json::from_str(meta_line).map_err(|e| DemoError::Malformed(e.to_string()))?;
    let demos = lines
        .map(|l| serde_json::from_str(l).map_err(|e| DemoError::Malformed(e.to_string())))
        .collect::<Result<Vec<Demonstration>, _>>()?;
    if demos.len() != count {
        return Err(DemoError::Malformed(format!("header says {count} demos, body has {}", demos.len())));
    }
    Ok(DemoSet { task, meta, demos })
}

pub fn save_demoset(set: &DemoSet, path: &Path) -> Result<(), DemoError> {
    fs::write(path, encode_demoset(set)?)?;
    Ok(())
}

pub fn load_demoset(path: &Path) -> Result<DemoSet, DemoError> {
    decode_demoset(&fs::read(path)?)
}
