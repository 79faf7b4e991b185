//! The symbolic task catalog, scripted experts, and demonstration sets.
//!
//! Every task is a small slot world whose masking rule reproduces one
//! memory structure: what becomes unobservable, and when. The masking rule
//! for each task is documented on its builder.

mod battery_try;
mod blocks_ranking_try;
mod cover_blocks;
pub mod demos;
mod observe_and_pick_up;
mod pick_fixed_block;
mod press_button;
mod put_back_block;
mod rearrange_blocks;
mod swap_blocks;
mod swap_t;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pomdp::{ActionId, HiddenState, TaskSpec, TmcLabel};

pub use battery_try::BatteryTry;
pub use blocks_ranking_try::BlocksRankingTry;
pub use cover_blocks::CoverBlocks;
pub use demos::{generate_demos, load_demoset, save_demoset, DemoError, DemoSet, DemoStep, Demonstration};
pub use observe_and_pick_up::ObserveAndPickUp;
pub use pick_fixed_block::PickFixedBlock;
pub use press_button::PressButton;
pub use put_back_block::PutBackBlock;
pub use rearrange_blocks::RearrangeBlocks;
pub use swap_blocks::SwapBlocks;
pub use swap_t::SwapT;

/// Every shipped task, in catalog order.
pub const TASK_NAMES: [&str; 10] = [
    "observe_and_pick_up",
    "rearrange_blocks",
    "put_back_block",
    "swap_blocks",
    "swap_t",
    "battery_try",
    "blocks_ranking_try",
    "cover_blocks",
    "press_button",
    "pick_fixed_block",
];

/// Suffix selecting the small instance used for exhaustive oracle certification.
pub const REDUCED_SUFFIX: &str = "_reduced";

#[derive(Debug, Error, PartialEq)]
pub enum TaskError {
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("parameter `{knob}` = {value} out of bounds [{lo}, {hi}] for {task}")]
    OutOfBounds { task: String, knob: &'static str, value: usize, lo: usize, hi: usize },
}

/// Size knobs. `None` selects the catalog default.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskParams {
    /// Pads (put_back_block, rearrange_blocks), objects (observe_and_pick_up),
    /// slots (pick_fixed_block), blocks (blocks_ranking_try, cover_blocks).
    pub size: Option<usize>,
    /// Orientation count (swap_t, battery_try).
    pub orientations: Option<usize>,
    /// Largest digit (press_button).
    pub max_digit: Option<usize>,
    /// Extra attempts beyond the number of distinct attempts (try tasks).
    pub attempt_slack: Option<usize>,
    /// Horizon override.
    pub horizon: Option<usize>,
}

impl TaskParams {
    fn knob(&self, task: &str, knob: &'static str, value: Option<usize>, default: usize, lo: usize, hi: usize) -> Result<usize, TaskError> {
        let v = value.unwrap_or(default);
        if v < lo || v > hi {
            return Err(TaskError::OutOfBounds { task: task.to_string(), knob, value: v, lo, hi });
        }
        Ok(v)
    }

    fn horizon_or(&self, task: &str, default: usize) -> Result<usize, TaskError> {
        self.knob(task, "horizon", self.horizon, default, 1, 64)
    }
}

/// Build a task by catalog name. `<name>_reduced` selects the reduced
/// instance; explicit params still override it.
pub fn build_task(name: &str, params: &TaskParams) -> Result<TaskSpec, TaskError> {
    let (base, reduced) = match name.strip_suffix(REDUCED_SUFFIX) {
        Some(b) => (b, true),
        None => (name, false),
    };
    let mut p = params.clone();
    if reduced {
        let r = reduced_params(base).ok_or_else(|| TaskError::UnknownTask(name.to_string()))?;
        p.size = p.size.or(r.size);
        p.orientations = p.orientations.or(r.orientations);
        p.max_digit = p.max_digit.or(r.max_digit);
        p.attempt_slack = p.attempt_slack.or(r.attempt_slack);
        p.horizon = p.horizon.or(r.horizon);
    }
    let spec: TaskSpec = match base {
        "observe_and_pick_up" => Arc::new(ObserveAndPickUp::new(&p)?),
        "rearrange_blocks" => Arc::new(RearrangeBlocks::new(&p)?),
        "put_back_block" => Arc::new(PutBackBlock::new(&p)?),
        "swap_blocks" => Arc::new(SwapBlocks::new(&p)?),
        "swap_t" => Arc::new(SwapT::new(&p)?),
        "battery_try" => Arc::new(BatteryTry::new(&p)?),
        "blocks_ranking_try" => Arc::new(BlocksRankingTry::new(&p)?),
        "cover_blocks" => Arc::new(CoverBlocks::new(&p)?),
        "press_button" => Arc::new(PressButton::new(&p)?),
        "pick_fixed_block" => Arc::new(PickFixedBlock::new(&p)?),
        _ => return Err(TaskError::UnknownTask(name.to_string())),
    };
    Ok(spec)
}

/// Parameters of the reduced instance of `base`.
pub fn reduced_params(base: &str) -> Option<TaskParams> {
    let p = |size, orientations, max_digit, attempt_slack, horizon| TaskParams {
        size,
        orientations,
        max_digit,
        attempt_slack,
        horizon,
    };
    Some(match base {
        "observe_and_pick_up" => p(Some(2), None, None, None, Some(4)),
        "rearrange_blocks" => p(Some(2), None, None, None, Some(7)),
        "put_back_block" => p(Some(2), None, None, None, Some(7)),
        "swap_blocks" => p(None, None, None, None, Some(9)),
        "swap_t" => p(None, Some(2), None, None, Some(8)),
        "battery_try" => p(None, Some(2), None, Some(0), None),
        "blocks_ranking_try" => p(None, None, None, Some(0), None),
        "cover_blocks" => p(Some(3), None, None, None, Some(8)),
        "press_button" => p(None, None, Some(2), None, Some(7)),
        "pick_fixed_block" => p(Some(2), None, None, None, Some(4)),
        _ => return None,
    })
}

/// Shared immutable metadata every task carries.
#[derive(Debug, Clone)]
pub(crate) struct TaskBase {
    pub name: String,
    pub horizon: usize,
    pub alphabet: Vec<usize>,
    pub actions: Vec<String>,
    pub vocab: Vec<String>,
    pub label: TmcLabel,
}

macro_rules! delegate_base {
    () => {
        fn name(&self) -> &str {
            &self.base.name
        }
        fn horizon(&self) -> usize {
            self.base.horizon
        }
        fn alphabet(&self) -> &[usize] {
            &self.base.alphabet
        }
        fn action_names(&self) -> &[String] {
            &self.base.actions
        }
        fn tmc_label(&self) -> crate::pomdp::TmcLabel {
            self.base.label
        }
        fn subtask_vocab(&self) -> &[String] {
            &self.base.vocab
        }
    };
}
pub(crate) use delegate_base;

pub(crate) fn act(i: usize) -> ActionId {
    ActionId(i as u16)
}

pub(crate) fn hs(bytes: Vec<u8>) -> HiddenState {
    HiddenState(bytes)
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<u8>> {
    fn rec(prefix: &mut Vec<u8>, used: &mut [bool], out: &mut Vec<Vec<u8>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i as u8);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}
