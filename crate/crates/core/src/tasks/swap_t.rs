use crate::pomdp::{ActionId, ExpertPolicy, ExpertStep, HiddenState, Observation, Task, TmcLabel};

use super::{act, delegate_base, hs, TaskBase, TaskError, TaskParams};

/// Two T blocks, X on position 0 and Y on position 1, each with an
/// orientation in `0..orientations`. A side buffer (position 2) is free.
/// The robot must swap positions and orientations: Y ends on position 0
/// facing X's original orientation and X on position 1 facing Y's.
///
/// Masking: orientations are visible until the first successful pick, then
/// every orientation channel reads 0. `place(p, θ)` sets the placed block's
/// orientation. The first time the swapped layout appears with empty hands,
/// it is judged once: matching orientations succeed, anything else fails.
///
/// State bytes: `[occ0, occ1, occ2, or0, or1, or2, held, picked, outcome,
/// theta_x, theta_y]`; occupant 0 empty, 1 X, 2 Y.
#[derive(Debug)]
pub struct SwapT {
    base: TaskBase,
    orientations: usize,
}

const POS: usize = 3;
const OR: usize = 3;
const HELD: usize = 6;
const PICKED: usize = 7;
const OUTCOME: usize = 8;
const THETA_X: usize = 9;
const THETA_Y: usize = 10;

impl SwapT {
    pub fn new(p: &TaskParams) -> Result<Self, TaskError> {
        let name = "swap_t";
        let orientations = p.knob(name, "orientations", p.orientations, 4, 2, 4)?;
        let horizon = p.horizon_or(name, 12)?;
        let mut actions: Vec<String> = (0..POS).map(|l| format!("pick_{l}")).collect();
        for l in 0..POS {
            actions.extend((0..orientations).map(|t| format!("place_{l}_rot{t}")));
        }
        actions.push("wait".into());
        let mut alphabet = vec![3; POS];
        alphabet.extend([orientations + 1; POS]);
        alphabet.push(3);
        Ok(Self {
            base: TaskBase {
                name: name.into(),
                horizon,
                alphabet,
                actions,
                vocab: vec!["swap both blocks with orientations".into()],
                label: TmcLabel::M1,
            },
            orientations,
        })
    }
}

impl Task for SwapT {
    delegate_base!();

    fn initial_states(&self) -> Vec<HiddenState> {
        let mut out = Vec::new();
        for tx in 0..self.orientations as u8 {
            for ty in 0..self.orientations as u8 {
                out.push(hs(vec![1, 2, 0, tx, ty, 0, 0, 0, 0, tx, ty]));
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
        if a < POS {
            if s[HELD] == 0 && s[a] != 0 {
                s[HELD] = s[a];
                s[a] = 0;
                s[OR + a] = 0;
                s[PICKED] = 1;
            }
        } else if a < POS + POS * self.orientations {
            let l = (a - POS) / self.orientations;
            let theta = (a - POS) % self.orientations;
            if s[HELD] != 0 && s[l] == 0 {
                s[l] = s[HELD];
                s[OR + l] = theta as u8;
                s[HELD] = 0;
            }
        }
        if s[0] == 2 && s[1] == 1 && s[HELD] == 0 {
            let ok = s[OR] == s[THETA_X] && s[OR + 1] == s[THETA_Y];
            s[OUTCOME] = if ok { 1 } else { 2 };
        }
        hs(s)
    }

    fn observe(&self, state: &HiddenState) -> Observation {
        let s = &state.0;
        let mut o = s[..POS].to_vec();
        for l in 0..POS {
            o.push(if s[PICKED] == 0 && s[l] != 0 { 1 + s[OR + l] } else { 0 });
        }
        o.push(s[HELD]);
        Observation(o)
    }

    fn success(&self, state: &HiddenState) -> bool {
        state.0[OUTCOME] == 1
    }

    fn completes_subtask(&self, _subtask: usize, _before: &HiddenState, _action: ActionId, after: &HiddenState) -> bool {
        self.success(after)
    }

    fn expert(&self) -> Box<dyn ExpertPolicy> {
        Box::new(Expert { plan: Vec::new(), orientations: self.orientations })
    }
}

struct Expert {
    plan: Vec<usize>,
    orientations: usize,
}

impl ExpertPolicy for Expert {
    fn act(&mut self, state: &HiddenState) -> ExpertStep {
        let s = &state.0;
        let place = |l: usize, t: usize| POS + l * self.orientations + t;
        if self.plan.is_empty() && s[PICKED] == 0 {
            let (tx, ty) = (s[THETA_X] as usize, s[THETA_Y] as usize);
            self.plan = vec![place(1, ty), 2, place(0, tx), 1, place(2, 0), 0];
        }
        let a = self.plan.pop().unwrap_or(POS + POS * self.orientations);
        ExpertStep { action: act(a), subtask: 0, end_flag: self.plan.is_empty() }
    }
}

