use crate::pomdp::{ActionId, ExpertPolicy, ExpertStep, HiddenState, Observation, Task, TmcLabel};

use super::{act, delegate_base, hs, TaskBase, TaskError, TaskParams};

/// Two digit tiles show counts `d1, d2` in `1..=max_digit`. The robot presses
/// the left button `d1` times and the middle button `d2` times, then the
/// right button to confirm. Confirming with wrong counts fails, and so does
/// pressing the left button after the middle one.
///
/// Masking: the digits are visible only in the first observation, and the
/// buttons look the same however often they were pressed, so both the
/// digits and the running counts live in memory.
///
/// Every press is its own subtask, so the plan is `d1` left presses, `d2`
/// middle presses, then confirm.
///
/// State bytes: `[d1, d2, masked, left, mid, outcome]`; press counters
/// saturate at `max_digit + 1`.
#[derive(Debug)]
pub struct PressButton {
    base: TaskBase,
    max_digit: usize,
}

const MASKED: usize = 2;
const LEFT: usize = 3;
const MID: usize = 4;
const OUTCOME: usize = 5;

impl PressButton {
    pub fn new(p: &TaskParams) -> Result<Self, TaskError> {
        let name = "press_button";
        let max_digit = p.knob(name, "max_digit", p.max_digit, 3, 1, 5)?;
        let horizon = p.horizon_or(name, 12)?;
        Ok(Self {
            base: TaskBase {
                name: name.into(),
                horizon,
                alphabet: vec![max_digit + 1; 2],
                actions: ["press_left", "press_mid", "press_right", "wait"].map(String::from).to_vec(),
                vocab: ["press left", "press mid", "confirm"].map(String::from).to_vec(),
                label: TmcLabel::Mn,
            },
            max_digit,
        })
    }
}

impl Task for PressButton {
    delegate_base!();

    fn initial_states(&self) -> Vec<HiddenState> {
        let d = self.max_digit as u8;
        (1..=d).flat_map(|a| (1..=d).map(move |b| hs(vec![a, b, 0, 0, 0, 0]))).collect()
    }

    fn transition(&self, state: &HiddenState, action: ActionId) -> HiddenState {
        if state.0[OUTCOME] != 0 {
            return state.clone();
        }
        let mut s = state.0.clone();
        s[MASKED] = 1;
        let cap = self.max_digit as u8 + 1;
        match action.index() {
            0 if s[MID] > 0 => s[OUTCOME] = 2,
            0 => s[LEFT] = (s[LEFT] + 1).min(cap),
            1 => s[MID] = (s[MID] + 1).min(cap),
            2 => s[OUTCOME] = if s[LEFT] == s[0] && s[MID] == s[1] { 1 } else { 2 },
            _ => {}
        }
        hs(s)
    }

    fn observe(&self, state: &HiddenState) -> Observation {
        let s = &state.0;
        if s[MASKED] == 0 {
            Observation(vec![s[0], s[1]])
        } else {
            Observation(vec![0, 0])
        }
    }

    fn success(&self, state: &HiddenState) -> bool {
        state.0[OUTCOME] == 1
    }

    fn completes_subtask(&self, subtask: usize, before: &HiddenState, action: ActionId, after: &HiddenState) -> bool {
        let (b, a) = (&before.0, &after.0);
        match subtask {
            0 => action.index() == 0 && b[OUTCOME] == 0 && a[LEFT] > b[LEFT],
            1 => action.index() == 1 && b[OUTCOME] == 0 && a[MID] > b[MID],
            _ => action.index() == 2 && b[OUTCOME] == 0,
        }
    }

    fn expert(&self) -> Box<dyn ExpertPolicy> {
        Box::new(Expert)
    }
}

struct Expert;

impl ExpertPolicy for Expert {
    fn act(&mut self, state: &HiddenState) -> ExpertStep {
        let s = &state.0;
        if s[LEFT] < s[0] {
            ExpertStep { action: act(0), subtask: 0, end_flag: true }
        } else if s[MID] < s[1] {
            ExpertStep { action: act(1), subtask: 1, end_flag: true }
        } else {
            ExpertStep { action: act(2), subtask: 2, end_flag: true }
        }
    }
}
