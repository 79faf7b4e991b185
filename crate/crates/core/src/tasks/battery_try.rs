use crate::pomdp::{ActionId, ExpertPolicy, ExpertStep, HiddenState, Observation, Task, TmcLabel};

use super::{act, delegate_base, hs, TaskBase, TaskError, TaskParams};

/// Two batteries go into a dual-slot holder, each in one of `orientations`
/// orientations. One hidden orientation pair is correct. Once both are in,
/// the holder either accepts (success) or ejects both batteries.
///
/// Masking: the only observation is how many batteries sit in the holder.
/// A rejected attempt looks exactly like the start, so remembering which
/// pairs were tried is the agent's job.
///
/// State bytes: `[target0, target1, slot0, slot1, success]`; slot codes are
/// 0 empty or 1 + orientation.
#[derive(Debug)]
pub struct BatteryTry {
    base: TaskBase,
    orientations: usize,
}

const SUCCESS: usize = 4;

impl BatteryTry {
    pub fn new(p: &TaskParams) -> Result<Self, TaskError> {
        let name = "battery_try";
        let orientations = p.knob(name, "orientations", p.orientations, 2, 2, 3)?;
        let slack = p.knob(name, "attempt_slack", p.attempt_slack, 2, 0, 4)?;
        let combos = orientations * orientations;
        let horizon = p.horizon_or(name, (combos + slack) * 2)?;
        let mut actions = Vec::new();
        for b in 0..2 {
            actions.extend((0..orientations).map(|o| format!("insert_b{b}_rot{o}")));
        }
        actions.push("wait".into());
        let vocab = (0..combos)
            .map(|k| format!("try {}/{}", k / orientations, k % orientations))
            .collect();
        Ok(Self {
            base: TaskBase { name: name.into(), horizon, alphabet: vec![3], actions, vocab, label: TmcLabel::Mn },
            orientations,
        })
    }
}

impl Task for BatteryTry {
    delegate_base!();

    fn initial_states(&self) -> Vec<HiddenState> {
        let o = self.orientations as u8;
        (0..o).flat_map(|a| (0..o).map(move |b| hs(vec![a, b, 0, 0, 0]))).collect()
    }

    fn transition(&self, state: &HiddenState, action: ActionId) -> HiddenState {
        if state.0[SUCCESS] == 1 {
            return state.clone();
        }
        let mut s = state.0.clone();
        let a = action.index();
        if a < 2 * self.orientations {
            let (b, o) = (a / self.orientations, a % self.orientations);
            if s[2 + b] == 0 {
                s[2 + b] = 1 + o as u8;
            }
            if s[2] != 0 && s[3] != 0 {
                if s[2] == 1 + s[0] && s[3] == 1 + s[1] {
                    s[SUCCESS] = 1;
                } else {
                    s[2] = 0;
                    s[3] = 0;
                }
            }
        }
        hs(s)
    }

    fn observe(&self, state: &HiddenState) -> Observation {
        let s = &state.0;
        let count = if s[SUCCESS] == 1 { 2 } else { (s[2] != 0) as u8 + (s[3] != 0) as u8 };
        Observation(vec![count])
    }

    fn success(&self, state: &HiddenState) -> bool {
        state.0[SUCCESS] == 1
    }

    fn completes_subtask(&self, _subtask: usize, before: &HiddenState, _action: ActionId, after: &HiddenState) -> bool {
        let inserted = |s: &HiddenState| (s.0[2] != 0) as u8 + (s.0[3] != 0) as u8;
        before.0[SUCCESS] == 0 && inserted(before) == 1 && (after.0[SUCCESS] == 1 || inserted(after) == 0)
    }

    fn expert(&self) -> Box<dyn ExpertPolicy> {
        Box::new(Expert { orientations: self.orientations, attempt: 0 })
    }
}

/// Tries orientation pairs in lexicographic order.
struct Expert {
    orientations: usize,
    attempt: usize,
}

impl ExpertPolicy for Expert {
    fn act(&mut self, state: &HiddenState) -> ExpertStep {
        let s = &state.0;
        let o = self.orientations;
        let k = self.attempt.min(o * o - 1);
        let (o0, o1) = (k / o, k % o);
        if s[2] == 0 {
            ExpertStep { action: act(o0), subtask: k, end_flag: false }
        } else {
            self.attempt += 1;
            ExpertStep { action: act(o + o1), subtask: k, end_flag: true }
        }
    }
}
