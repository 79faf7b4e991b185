use crate::pomdp::{ActionId, ExpertPolicy, ExpertStep, HiddenState, Observation, Task, TmcLabel};

use super::{act, delegate_base, hs, TaskBase, TaskError, TaskParams};

/// Memory-free control. One of `slots` blocks carries a marker that stays
/// visible while the block is on the table; the robot picks it and drops it
/// into the goal bin.
///
/// State bytes: `[target, held, placed]`; `held`/`placed` are 0 for none or
/// `1 + slot`. Dropping a plain block into the bin fails the episode.
#[derive(Debug)]
pub struct PickFixedBlock {
    base: TaskBase,
    slots: usize,
}

const TARGET: usize = 0;
const HELD: usize = 1;
const PLACED: usize = 2;

impl PickFixedBlock {
    pub fn new(p: &TaskParams) -> Result<Self, TaskError> {
        let name = "pick_fixed_block";
        let slots = p.knob(name, "size", p.size, 3, 2, 6)?;
        let horizon = p.horizon_or(name, 8)?;
        let mut actions: Vec<String> = (0..slots).map(|j| format!("pick_{j}")).collect();
        actions.push("place_goal".into());
        actions.push("wait".into());
        Ok(Self {
            base: TaskBase {
                name: name.into(),
                horizon,
                alphabet: vec![slots + 1, 3, 3],
                actions,
                vocab: vec!["pick the marked block".into()],
                label: TmcLabel::M0,
            },
            slots,
        })
    }

    fn place_goal(&self) -> usize {
        self.slots
    }
}

impl Task for PickFixedBlock {
    delegate_base!();

    fn initial_states(&self) -> Vec<HiddenState> {
        (0..self.slots).map(|t| hs(vec![t as u8, 0, 0])).collect()
    }

    fn transition(&self, state: &HiddenState, action: ActionId) -> HiddenState {
        let mut s = state.0.clone();
        if s[PLACED] != 0 {
            return state.clone();
        }
        let a = action.index();
        if a < self.slots {
            if s[HELD] == 0 {
                s[HELD] = 1 + a as u8;
            }
        } else if a == self.place_goal() && s[HELD] != 0 {
            s[PLACED] = s[HELD];
            s[HELD] = 0;
        }
        hs(s)
    }

    fn observe(&self, state: &HiddenState) -> Observation {
        let s = &state.0;
        let target = 1 + s[TARGET];
        let kind = |v: u8| match v {
            0 => 0,
            v if v == target => 1,
            _ => 2,
        };
        let marker = if s[HELD] == target || s[PLACED] == target { self.slots as u8 } else { s[TARGET] };
        Observation(vec![marker, kind(s[HELD]), kind(s[PLACED])])
    }

    fn success(&self, state: &HiddenState) -> bool {
        state.0[PLACED] == 1 + state.0[TARGET]
    }

    fn completes_subtask(&self, _subtask: usize, _before: &HiddenState, _action: ActionId, after: &HiddenState) -> bool {
        self.success(after)
    }

    fn expert(&self) -> Box<dyn ExpertPolicy> {
        Box::new(Expert { goal: self.place_goal() })
    }
}

struct Expert {
    goal: usize,
}

impl ExpertPolicy for Expert {
    fn act(&mut self, state: &HiddenState) -> ExpertStep {
        let s = &state.0;
        if s[HELD] == 0 {
            ExpertStep { action: act(s[TARGET] as usize), subtask: 0, end_flag: false }
        } else {
            ExpertStep { action: act(self.goal), subtask: 0, end_flag: true }
        }
    }
}
