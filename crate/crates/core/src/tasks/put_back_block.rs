use crate::pomdp::{ActionId, ExpertPolicy, ExpertStep, HiddenState, Observation, Task, TmcLabel};

use super::{act, delegate_base, hs, TaskBase, TaskError, TaskParams};

/// A block sits on one of `pads` pads around a center spot. The robot moves
/// it to the center, presses the button (only effective with the block on
/// the center), then must return it to the pad it started on.
///
/// Masking: the observation shows where the block is now and whether the
/// button light is on; nothing records the starting pad. Once the button has
/// been pressed, placing the block on a wrong pad locks the episode as failed.
///
/// State bytes: `[location, origin, pressed, failed]`; location `pads` is the
/// center and `pads + 1` the gripper.
#[derive(Debug)]
pub struct PutBackBlock {
    base: TaskBase,
    pads: usize,
}

const LOC: usize = 0;
const ORIGIN: usize = 1;
const PRESSED: usize = 2;
const FAILED: usize = 3;

impl PutBackBlock {
    pub fn new(p: &TaskParams) -> Result<Self, TaskError> {
        let name = "put_back_block";
        let pads = p.knob(name, "size", p.size, 4, 2, 6)?;
        let horizon = p.horizon_or(name, 16)?;
        Ok(Self {
            base: TaskBase {
                name: name.into(),
                horizon,
                alphabet: vec![pads + 2, 2],
                actions: pick_place_actions(pads, "center"),
                vocab: vec!["put the block back".into()],
                label: TmcLabel::M1,
            },
            pads,
        })
    }

    fn center(&self) -> usize {
        self.pads
    }
    fn held(&self) -> u8 {
        self.pads as u8 + 1
    }
    fn locations(&self) -> usize {
        self.pads + 1
    }
}

/// `pick_*` and `place_*` over pads `0..pads` plus one named extra spot, then
/// `press` and `wait`.
pub(crate) fn pick_place_actions(pads: usize, extra: &str) -> Vec<String> {
    let loc = |l: usize| if l < pads { format!("pad{l}") } else { extra.to_string() };
    let mut v: Vec<String> = (0..=pads).map(|l| format!("pick_{}", loc(l))).collect();
    v.extend((0..=pads).map(|l| format!("place_{}", loc(l))));
    v.push("press".into());
    v.push("wait".into());
    v
}

impl Task for PutBackBlock {
    delegate_base!();

    fn initial_states(&self) -> Vec<HiddenState> {
        (0..self.pads).map(|p| hs(vec![p as u8, p as u8, 0, 0])).collect()
    }

    fn transition(&self, state: &HiddenState, action: ActionId) -> HiddenState {
        if self.success(state) || state.0[FAILED] == 1 {
            return state.clone();
        }
        let mut s = state.0.clone();
        let a = action.index();
        let n = self.locations();
        if a < n {
            if s[LOC] as usize == a {
                s[LOC] = self.held();
            }
        } else if a < 2 * n {
            let l = a - n;
            if s[LOC] == self.held() {
                s[LOC] = l as u8;
                if s[PRESSED] == 1 && l < self.pads && l as u8 != s[ORIGIN] {
                    s[FAILED] = 1;
                }
            }
        } else if a == 2 * n && s[LOC] as usize == self.center() {
            s[PRESSED] = 1;
        }
        hs(s)
    }

    fn observe(&self, state: &HiddenState) -> Observation {
        Observation(vec![state.0[LOC], state.0[PRESSED]])
    }

    fn success(&self, state: &HiddenState) -> bool {
        let s = &state.0;
        s[PRESSED] == 1 && s[LOC] == s[ORIGIN] && s[FAILED] == 0
    }

    fn completes_subtask(&self, _subtask: usize, _before: &HiddenState, _action: ActionId, after: &HiddenState) -> bool {
        self.success(after)
    }

    fn expert(&self) -> Box<dyn ExpertPolicy> {
        Box::new(Expert { pads: self.pads })
    }
}

struct Expert {
    pads: usize,
}

impl ExpertPolicy for Expert {
    fn act(&mut self, state: &HiddenState) -> ExpertStep {
        let s = &state.0;
        let n = self.pads + 1;
        let center = self.pads;
        let held = self.pads as u8 + 1;
        let step = |a: usize, end: bool| ExpertStep { action: act(a), subtask: 0, end_flag: end };
        match (s[LOC], s[PRESSED]) {
            (l, 0) if l == held => step(n + center, false),
            (l, 0) if (l as usize) == center => step(2 * n, false),
            (l, 0) => step(l as usize, false),
            (l, _) if (l as usize) == center => step(center, false),
            _ => step(n + s[ORIGIN] as usize, true),
        }
    }
}
