use crate::pomdp::{ActionId, ExpertPolicy, ExpertStep, HiddenState, Observation, Task, TmcLabel};

use super::{act, delegate_base, hs, TaskBase, TaskError, TaskParams};

/// Three pads, blocks A and B on two of them. The robot must exchange the
/// two blocks through the empty pad, then press the button. Pressing in any
/// other configuration fails.
///
/// Masking: the starting layout is not observable once blocks move. The
/// swapped layout of one instance is the starting layout of another, so
/// deciding whether to press or to start swapping needs the first frame.
///
/// State bytes: `[occ0, occ1, occ2, held, outcome, pos_a, pos_b]` with
/// occupant codes 0 empty, 1 A, 2 B and outcome 0 running, 1 success, 2 fail.
#[derive(Debug)]
pub struct SwapBlocks {
    base: TaskBase,
}

const PADS: usize = 3;
const HELD: usize = 3;
const OUTCOME: usize = 4;
const POS_A: usize = 5;
const POS_B: usize = 6;
const PRESS: usize = 2 * PADS;

impl SwapBlocks {
    pub fn new(p: &TaskParams) -> Result<Self, TaskError> {
        let name = "swap_blocks";
        let horizon = p.horizon_or(name, 12)?;
        let mut actions: Vec<String> = (0..PADS).map(|l| format!("pick_pad{l}")).collect();
        actions.extend((0..PADS).map(|l| format!("place_pad{l}")));
        actions.push("press".into());
        actions.push("wait".into());
        Ok(Self {
            base: TaskBase {
                name: name.into(),
                horizon,
                alphabet: vec![3, 3, 3, 3],
                actions,
                vocab: vec!["swap the blocks and press".into()],
                label: TmcLabel::M1,
            },
        })
    }
}

impl Task for SwapBlocks {
    delegate_base!();

    fn initial_states(&self) -> Vec<HiddenState> {
        let mut out = Vec::new();
        for a in 0..PADS {
            for b in 0..PADS {
                if a != b {
                    let mut s = vec![0u8; 7];
                    s[a] = 1;
                    s[b] = 2;
                    s[POS_A] = a as u8;
                    s[POS_B] = b as u8;
                    out.push(hs(s));
                }
            }
        }
        out
    }

    fn transition(&self, state: &HiddenState, action: ActionId) -> HiddenState {
        if state.0[OUTCOME] != 0 {
            return state.clone();
        }
        let mut s = state.0.clone();
        let a = action.index();
        if a < PADS {
            if s[HELD] == 0 && s[a] != 0 {
                s[HELD] = s[a];
                s[a] = 0;
            }
        } else if a < 2 * PADS {
            let l = a - PADS;
            if s[HELD] != 0 && s[l] == 0 {
                s[l] = s[HELD];
                s[HELD] = 0;
            }
        } else if a == PRESS {
            let swapped = s[HELD] == 0 && s[s[POS_A] as usize] == 2 && s[s[POS_B] as usize] == 1;
            s[OUTCOME] = if swapped { 1 } else { 2 };
        }
        hs(s)
    }

    fn observe(&self, state: &HiddenState) -> Observation {
        let s = &state.0;
        Observation(s[..=HELD].to_vec())
    }

    fn success(&self, state: &HiddenState) -> bool {
        state.0[OUTCOME] == 1
    }

    fn completes_subtask(&self, _subtask: usize, _before: &HiddenState, _action: ActionId, after: &HiddenState) -> bool {
        self.success(after)
    }

    fn expert(&self) -> Box<dyn ExpertPolicy> {
        Box::new(Expert { plan: Vec::new() })
    }
}

struct Expert {
    plan: Vec<usize>,
}

impl ExpertPolicy for Expert {
    fn act(&mut self, state: &HiddenState) -> ExpertStep {
        let s = &state.0;
        if self.plan.is_empty() {
            let (a, b) = (s[POS_A] as usize, s[POS_B] as usize);
            let e = 3 - a - b;
            // Executed back to front.
            self.plan = vec![PRESS, PADS + b, e, PADS + a, b, PADS + e, a];
        }
        let a = self.plan.pop().unwrap_or(PRESS);
        ExpertStep { action: act(a), subtask: 0, end_flag: a == PRESS }
    }
}
