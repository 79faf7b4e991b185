use crate::pomdp::{ActionId, ExpertPolicy, ExpertStep, HiddenState, Observation, Task, TmcLabel};

use super::{act, delegate_base, hs, permutations, TaskBase, TaskError, TaskParams};

/// A reference label is shown on the shelf while the table is still
/// screened. The first action lowers the screen and hides the reference;
/// the robot must then pick the table object whose label matches.
///
/// Masking: the reference channel reads 0 once the table is revealed, and
/// the table channels read 0 before. Picks before the reveal do nothing.
///
/// State bytes: `[reference, phase, outcome, perm[0..n]]` where `perm[j]` is
/// the label at table slot `j` and outcome is 0 running, 1 success, 2 fail.
#[derive(Debug)]
pub struct ObserveAndPickUp {
    base: TaskBase,
    objects: usize,
}

const REF: usize = 0;
const PHASE: usize = 1;
const OUTCOME: usize = 2;
const PERM: usize = 3;

impl ObserveAndPickUp {
    pub fn new(p: &TaskParams) -> Result<Self, TaskError> {
        let name = "observe_and_pick_up";
        let objects = p.knob(name, "size", p.size, 3, 2, 5)?;
        let horizon = p.horizon_or(name, 8)?;
        let mut actions = vec!["wait".to_string()];
        actions.extend((0..objects).map(|j| format!("pick_{j}")));
        Ok(Self {
            base: TaskBase {
                name: name.into(),
                horizon,
                alphabet: vec![objects + 1; objects + 1],
                actions,
                vocab: vec!["pick the object matching the reference".into()],
                label: TmcLabel::M1,
            },
            objects,
        })
    }
}

impl Task for ObserveAndPickUp {
    delegate_base!();

    fn initial_states(&self) -> Vec<HiddenState> {
        let mut out = Vec::new();
        for r in 0..self.objects {
            for perm in permutations(self.objects) {
                let mut s = vec![r as u8, 0, 0];
                s.extend(perm);
                out.push(hs(s));
            }
        }
        out
    }

    fn transition(&self, state: &HiddenState, action: ActionId) -> HiddenState {
        let mut s = state.0.clone();
        if s[OUTCOME] != 0 {
            return state.clone();
        }
        if s[PHASE] == 0 {
            s[PHASE] = 1;
            return hs(s);
        }
        let a = action.index();
        if a >= 1 {
            let slot = a - 1;
            s[OUTCOME] = if s[PERM + slot] == s[REF] { 1 } else { 2 };
        }
        hs(s)
    }

    fn observe(&self, state: &HiddenState) -> Observation {
        let s = &state.0;
        let mut o = Vec::with_capacity(self.objects + 1);
        if s[PHASE] == 0 {
            o.push(1 + s[REF]);
            o.extend(std::iter::repeat(0).take(self.objects));
        } else {
            o.push(0);
            o.extend(s[PERM..PERM + self.objects].iter().map(|l| 1 + l));
        }
        Observation(o)
    }

    fn success(&self, state: &HiddenState) -> bool {
        state.0[OUTCOME] == 1
    }

    fn completes_subtask(&self, _subtask: usize, _before: &HiddenState, _action: ActionId, after: &HiddenState) -> bool {
        self.success(after)
    }

    fn expert(&self) -> Box<dyn ExpertPolicy> {
        Box::new(Expert)
    }
}

struct Expert;

impl ExpertPolicy for Expert {
    fn act(&mut self, state: &HiddenState) -> ExpertStep {
        let s = &state.0;
        if s[PHASE] == 0 {
            return ExpertStep { action: act(0), subtask: 0, end_flag: false };
        }
        let slot = s[PERM..].iter().position(|&l| l == s[REF]).expect("reference label on table");
        ExpertStep { action: act(1 + slot), subtask: 0, end_flag: true }
    }
}
