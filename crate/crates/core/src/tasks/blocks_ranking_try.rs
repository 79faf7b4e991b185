use crate::pomdp::{ActionId, ExpertPolicy, ExpertStep, HiddenState, Observation, Task, TmcLabel};

use super::{act, delegate_base, hs, permutations, TaskBase, TaskError, TaskParams};

/// `size` colored blocks must be slotted into a rack in a hidden order.
/// Pressing the button with a full rack either succeeds or clears the rack.
///
/// Masking: the rack is covered, so the observation is only its fill count.
/// A rejected arrangement is indistinguishable from the empty start.
///
/// State bytes: `[target[0..n], rack[0..n], success]`; rack codes are
/// 0 empty or 1 + block.
#[derive(Debug)]
pub struct BlocksRankingTry {
    base: TaskBase,
    blocks: usize,
}

impl BlocksRankingTry {
    pub fn new(p: &TaskParams) -> Result<Self, TaskError> {
        let name = "blocks_ranking_try";
        let blocks = p.knob(name, "size", p.size, 3, 2, 3)?;
        let slack = p.knob(name, "attempt_slack", p.attempt_slack, 2, 0, 4)?;
        let perms = permutations(blocks);
        let horizon = p.horizon_or(name, (perms.len() + slack) * (blocks + 1))?;
        let mut actions: Vec<String> = (0..blocks).map(|c| format!("insert_{c}")).collect();
        actions.push("press".into());
        actions.push("wait".into());
        let vocab = perms
            .iter()
            .map(|pm| format!("arrange {}", pm.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("")))
            .collect();
        Ok(Self {
            base: TaskBase { name: name.into(), horizon, alphabet: vec![blocks + 1], actions, vocab, label: TmcLabel::Mn },
            blocks,
        })
    }

    fn success_ix(&self) -> usize {
        2 * self.blocks
    }
    fn press(&self) -> usize {
        self.blocks
    }
    fn filled(&self, s: &[u8]) -> usize {
        s[self.blocks..2 * self.blocks].iter().filter(|&&c| c != 0).count()
    }
}

impl Task for BlocksRankingTry {
    delegate_base!();

    fn initial_states(&self) -> Vec<HiddenState> {
        permutations(self.blocks)
            .into_iter()
            .map(|mut p| {
                p.extend(std::iter::repeat(0).take(self.blocks + 1));
                hs(p)
            })
            .collect()
    }

    fn transition(&self, state: &HiddenState, action: ActionId) -> HiddenState {
        let n = self.blocks;
        if state.0[self.success_ix()] == 1 {
            return state.clone();
        }
        let mut s = state.0.clone();
        let a = action.index();
        let filled = self.filled(&s);
        if a < n {
            let code = 1 + a as u8;
            if filled < n && !s[n..2 * n].contains(&code) {
                s[n + filled] = code;
            }
        } else if a == self.press() && filled == n {
            if (0..n).all(|i| s[n + i] == 1 + s[i]) {
                s[self.success_ix()] = 1;
            } else {
                s[n..2 * n].iter_mut().for_each(|c| *c = 0);
            }
        }
        hs(s)
    }

    fn observe(&self, state: &HiddenState) -> Observation {
        Observation(vec![self.filled(&state.0) as u8])
    }

    fn success(&self, state: &HiddenState) -> bool {
        state.0[self.success_ix()] == 1
    }

    fn completes_subtask(&self, _subtask: usize, before: &HiddenState, action: ActionId, _after: &HiddenState) -> bool {
        !self.success(before) && action.index() == self.press() && self.filled(&before.0) == self.blocks
    }

    fn expert(&self) -> Box<dyn ExpertPolicy> {
        Box::new(Expert { perms: permutations(self.blocks), attempt: 0 })
    }
}

/// Tries arrangements in lexicographic order, never repeating one.
struct Expert {
    perms: Vec<Vec<u8>>,
    attempt: usize,
}

impl ExpertPolicy for Expert {
    fn act(&mut self, state: &HiddenState) -> ExpertStep {
        let n = self.perms[0].len();
        let k = self.attempt.min(self.perms.len() - 1);
        let filled = state.0[n..2 * n].iter().filter(|&&c| c != 0).count();
        if filled < n {
            ExpertStep { action: act(self.perms[k][filled] as usize), subtask: k, end_flag: false }
        } else {
            self.attempt += 1;
            ExpertStep { action: act(n), subtask: k, end_flag: true }
        }
    }
}
