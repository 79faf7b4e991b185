use crate::pomdp::{ActionId, ExpertPolicy, ExpertStep, HiddenState, Observation, Task, TmcLabel};

use super::put_back_block::pick_place_actions;
use super::{act, delegate_base, hs, TaskBase, TaskError, TaskParams};

/// `pads` pads and a middle spot. One pad is empty, the others hold plain
/// blocks, and the middle holds the mover block. The robot parks the mover
/// on the free pad, presses the button, then brings the mover back to the
/// middle.
///
/// Masking: blocks are observationally identical, so after parking only
/// memory of which pad was free tells the mover apart. Pad blocks are locked
/// until the button is pressed (press needs every pad full and the middle
/// empty). After the press, dropping a plain block in the middle fails.
///
/// State bytes: `[occupant[0..=pads], held, pressed]`; occupant/held codes
/// are 0 empty, 1 plain, 2 mover.
#[derive(Debug)]
pub struct RearrangeBlocks {
    base: TaskBase,
    pads: usize,
}

const PLAIN: u8 = 1;
const MOVER: u8 = 2;

impl RearrangeBlocks {
    pub fn new(p: &TaskParams) -> Result<Self, TaskError> {
        let name = "rearrange_blocks";
        let pads = p.knob(name, "size", p.size, 4, 2, 6)?;
        let horizon = p.horizon_or(name, 16)?;
        let mut alphabet = vec![2; pads + 1];
        alphabet.extend([2, 2]);
        Ok(Self {
            base: TaskBase {
                name: name.into(),
                horizon,
                alphabet,
                actions: pick_place_actions(pads, "middle"),
                vocab: vec!["park the middle block and bring it back".into()],
                label: TmcLabel::M1,
            },
            pads,
        })
    }

    fn held_ix(&self) -> usize {
        self.pads + 1
    }
    fn pressed_ix(&self) -> usize {
        self.pads + 2
    }
    fn middle(&self) -> usize {
        self.pads
    }
    fn failed(&self, s: &[u8]) -> bool {
        s[self.pressed_ix()] == 1 && s[self.middle()] == PLAIN
    }
}

impl Task for RearrangeBlocks {
    delegate_base!();

    fn initial_states(&self) -> Vec<HiddenState> {
        (0..self.pads)
            .map(|e| {
                let mut s: Vec<u8> = (0..self.pads).map(|p| if p == e { 0 } else { PLAIN }).collect();
                s.extend([MOVER, 0, 0]);
                hs(s)
            })
            .collect()
    }

    fn transition(&self, state: &HiddenState, action: ActionId) -> HiddenState {
        let s0 = &state.0;
        if self.success(state) || self.failed(s0) {
            return state.clone();
        }
        let mut s = s0.clone();
        let (h, pr) = (self.held_ix(), self.pressed_ix());
        let n = self.pads + 1;
        let a = action.index();
        if a < n {
            let locked = s[pr] == 0 && a < self.pads;
            if s[h] == 0 && s[a] != 0 && !locked {
                s[h] = s[a];
                s[a] = 0;
            }
        } else if a < 2 * n {
            let l = a - n;
            if s[h] != 0 && s[l] == 0 {
                s[l] = s[h];
                s[h] = 0;
            }
        } else if a == 2 * n {
            let pads_full = s[..self.pads].iter().all(|&o| o != 0);
            if pads_full && s[self.middle()] == 0 && s[h] == 0 {
                s[pr] = 1;
            }
        }
        hs(s)
    }

    fn observe(&self, state: &HiddenState) -> Observation {
        let s = &state.0;
        let mut o: Vec<u8> = s[..=self.pads].iter().map(|&x| (x != 0) as u8).collect();
        o.push((s[self.held_ix()] != 0) as u8);
        o.push(s[self.pressed_ix()]);
        Observation(o)
    }

    fn success(&self, state: &HiddenState) -> bool {
        let s = &state.0;
        s[self.pressed_ix()] == 1 && s[self.middle()] == MOVER
    }

    fn completes_subtask(&self, _subtask: usize, _before: &HiddenState, _action: ActionId, after: &HiddenState) -> bool {
        self.success(after)
    }

    fn expert(&self) -> Box<dyn ExpertPolicy> {
        Box::new(Expert { pads: self.pads, parked: None })
    }
}

struct Expert {
    pads: usize,
    parked: Option<usize>,
}

impl ExpertPolicy for Expert {
    fn act(&mut self, state: &HiddenState) -> ExpertStep {
        let s = &state.0;
        let n = self.pads + 1;
        let middle = self.pads;
        let held = s[self.pads + 1];
        let pressed = s[self.pads + 2] == 1;
        let step = |a: usize, end: bool| ExpertStep { action: act(a), subtask: 0, end_flag: end };
        if !pressed {
            if held == MOVER {
                let free = (0..self.pads).find(|&p| s[p] == 0).expect("a free pad");
                self.parked = Some(free);
                step(n + free, false)
            } else if s[middle] == MOVER {
                step(middle, false)
            } else {
                step(2 * n, false)
            }
        } else {
            let parked = self.parked.unwrap_or_else(|| (0..self.pads).find(|&p| s[p] == MOVER).expect("mover parked"));
            if held == MOVER {
                step(n + middle, true)
            } else {
                step(parked, false)
            }
        }
    }
}
