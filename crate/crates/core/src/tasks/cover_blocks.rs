use crate::pomdp::{ActionId, ExpertPolicy, ExpertStep, HiddenState, Observation, Task, TmcLabel};

use super::{act, delegate_base, hs, permutations, TaskBase, TaskError, TaskParams};

/// `size` colored blocks in a row are covered left to right, then must be
/// uncovered in color order (red, green, blue, ...).
///
/// Masking: only the next block to be covered shows its color; the row
/// carries no position counter, so the color seen at each step is tied to a
/// position only by remembering the order of sightings. Uncovered blocks
/// show their color again. Uncovering before every block is covered, or out
/// of color order, fails the episode.
///
/// State bytes: `[color[0..n], covered, uncovered[0..n], next_color, failed]`.
#[derive(Debug)]
pub struct CoverBlocks {
    base: TaskBase,
    blocks: usize,
}

impl CoverBlocks {
    pub fn new(p: &TaskParams) -> Result<Self, TaskError> {
        let name = "cover_blocks";
        let blocks = p.knob(name, "size", p.size, 3, 2, 4)?;
        let horizon = p.horizon_or(name, 4 * blocks)?;
        let mut actions = vec!["cover_next".to_string()];
        actions.extend((0..blocks).map(|j| format!("uncover_{j}")));
        actions.push("wait".into());
        let mut vocab = vec!["cover next".to_string()];
        vocab.extend((0..blocks).map(|j| format!("uncover {j}")));
        Ok(Self {
            base: TaskBase {
                name: name.into(),
                horizon,
                alphabet: vec![blocks + 1; blocks + 1],
                actions,
                vocab,
                label: TmcLabel::Mn,
            },
            blocks,
        })
    }

    fn covered_ix(&self) -> usize {
        self.blocks
    }
    fn next_ix(&self) -> usize {
        2 * self.blocks + 1
    }
    fn failed_ix(&self) -> usize {
        2 * self.blocks + 2
    }
}

impl Task for CoverBlocks {
    delegate_base!();

    fn initial_states(&self) -> Vec<HiddenState> {
        permutations(self.blocks)
            .into_iter()
            .map(|mut p| {
                p.extend(std::iter::repeat(0).take(self.blocks + 3));
                hs(p)
            })
            .collect()
    }

    fn transition(&self, state: &HiddenState, action: ActionId) -> HiddenState {
        let n = self.blocks;
        let s0 = &state.0;
        if self.success(state) || s0[self.failed_ix()] == 1 {
            return state.clone();
        }
        let mut s = s0.clone();
        let a = action.index();
        let covered = s[self.covered_ix()] as usize;
        if a == 0 {
            if covered < n {
                s[self.covered_ix()] += 1;
            }
        } else if a <= n {
            let j = a - 1;
            if covered < n {
                s[self.failed_ix()] = 1;
            } else if s[n + 1 + j] == 0 {
                if s[j] == s[self.next_ix()] {
                    s[n + 1 + j] = 1;
                    s[self.next_ix()] += 1;
                } else {
                    s[self.failed_ix()] = 1;
                }
            }
        }
        hs(s)
    }

    fn observe(&self, state: &HiddenState) -> Observation {
        let n = self.blocks;
        let s = &state.0;
        let covered = s[self.covered_ix()] as usize;
        let mut o = vec![if covered < n { 1 + s[covered] } else { 0 }];
        o.extend((0..n).map(|j| if s[n + 1 + j] == 1 { 1 + s[j] } else { 0 }));
        Observation(o)
    }

    fn success(&self, state: &HiddenState) -> bool {
        state.0[self.next_ix()] as usize == self.blocks
    }

    fn completes_subtask(&self, subtask: usize, before: &HiddenState, action: ActionId, after: &HiddenState) -> bool {
        let n = self.blocks;
        if subtask == 0 {
            action.index() == 0 && after.0[self.covered_ix()] > before.0[self.covered_ix()]
        } else {
            let j = subtask - 1;
            before.0[n + 1 + j] == 0 && after.0[n + 1 + j] == 1
        }
    }

    fn expert(&self) -> Box<dyn ExpertPolicy> {
        Box::new(Expert { blocks: self.blocks })
    }
}

struct Expert {
    blocks: usize,
}

impl ExpertPolicy for Expert {
    fn act(&mut self, state: &HiddenState) -> ExpertStep {
        let n = self.blocks;
        let s = &state.0;
        if (s[n] as usize) < n {
            return ExpertStep { action: act(0), subtask: 0, end_flag: true };
        }
        let next = s[2 * n + 1];
        let j = s[..n].iter().position(|&c| c == next).unwrap_or(0);
        ExpertStep { action: act(1 + j), subtask: 1 + j, end_flag: true }
    }
}
