use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::{HarnessError, ResultRow};

pub const RESULTS_HEADER: &str =
    "task,variant,successes,episodes,success_rate,wilson_lo,wilson_hi,mean_steps,mean_planner_calls,seed,checkpoint_sha256";

/// Published success rates (percent) of the original robot-scale system, for
/// side-by-side display only. These are never compared numerically.
pub const PUBLISHED_REFERENCE: &[(&str, &str, f64)] = &[
    ("observe_and_pick_up", "vanilla", 4.0),
    ("rearrange_blocks", "vanilla", 89.0),
    ("put_back_block", "vanilla", 90.0),
    ("swap_blocks", "vanilla", 67.0),
    ("swap_t", "vanilla", 14.0),
    ("observe_and_pick_up", "no_anchor", 4.0),
    ("rearrange_blocks", "no_anchor", 73.0),
    ("put_back_block", "no_anchor", 35.0),
    ("swap_blocks", "no_anchor", 15.0),
    ("swap_t", "no_anchor", 7.0),
    ("observe_and_pick_up", "no_sliding", 3.0),
    ("rearrange_blocks", "no_sliding", 62.0),
    ("put_back_block", "no_sliding", 78.0),
    ("swap_blocks", "no_sliding", 39.0),
    ("swap_t", "no_sliding", 20.0),
    ("battery_try", "vanilla", 28.0),
    ("blocks_ranking_try", "vanilla", 18.0),
    ("cover_blocks", "vanilla", 68.0),
    ("press_button", "vanilla", 0.0),
    ("battery_try", "no_key", 13.0),
    ("blocks_ranking_try", "no_key", 1.0),
    ("cover_blocks", "no_key", 5.0),
    ("press_button", "no_key", 0.0),
    ("battery_try", "no_anchor", 14.0),
    ("blocks_ranking_try", "no_anchor", 0.0),
    ("cover_blocks", "no_anchor", 92.0),
    ("press_button", "no_anchor", 1.0),
    ("battery_try", "no_sliding", 17.0),
    ("blocks_ranking_try", "no_sliding", 0.0),
    ("cover_blocks", "no_sliding", 84.0),
    ("press_button", "no_sliding", 0.0),
    ("battery_try", "gt_classifier", 30.0),
    ("blocks_ranking_try", "gt_classifier", 45.0),
    ("cover_blocks", "gt_classifier", 92.0),
    ("press_button", "gt_classifier", 14.0),
];

const REFERENCE_SOURCE: &str = "published ablation table";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Relation {
    /// lhs rate > rhs rate.
    Greater,
    /// lhs rate >= rhs rate.
    AtLeast,
    /// lhs rate <= upper Wilson bound of rhs.
    WithinChanceOf,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Expectation {
    pub task: String,
    pub lhs: String,
    pub relation: Relation,
    pub rhs: String,
}

impl Expectation {
    pub fn new(task: &str, lhs: &str, relation: Relation, rhs: &str) -> Self {
        Self { task: task.into(), lhs: lhs.into(), relation, rhs: rhs.into() }
    }

    pub fn describe(&self) -> String {
        let op = match self.relation {
            Relation::Greater => ">",
            Relation::AtLeast => ">=",
            Relation::WithinChanceOf => "<= chance level of",
        };
        format!("{} {op} {} on {}", self.lhs, self.rhs, self.task)
    }

    pub fn judge(&self, rows: &[ResultRow]) -> Verdict {
        let find = |v: &str| rows.iter().find(|r| r.task == self.task && r.variant == v);
        let holds = match (find(&self.lhs), find(&self.rhs)) {
            (Some(l), Some(r)) => Some(match self.relation {
                Relation::Greater => l.success_rate > r.success_rate,
                Relation::AtLeast => l.success_rate >= r.success_rate,
                Relation::WithinChanceOf => l.success_rate <= r.wilson_hi,
            }),
            _ => None,
        };
        Verdict { expectation: self.clone(), holds }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Verdict {
    pub expectation: Expectation,
    /// `None` when a row needed for the comparison is missing.
    pub holds: Option<bool>,
}

/// Expected orderings for the tasks present in `tasks`.
pub fn default_expectations(tasks: &[&str]) -> Vec<Expectation> {
    let has = |t: &str| tasks.contains(&t);
    let mut out = Vec::new();
    for t in ["put_back_block", "rearrange_blocks"] {
        if has(t) {
            out.push(Expectation::new(t, "vanilla", Relation::Greater, "markovian"));
        }
    }
    if has("put_back_block") {
        out.push(Expectation::new("put_back_block", "vanilla", Relation::Greater, "no_anchor"));
    }
    for t in ["blocks_ranking_try", "press_button"] {
        if has(t) {
            out.push(Expectation::new(t, "no_key", Relation::WithinChanceOf, "markovian"));
            out.push(Expectation::new(t, "vanilla", Relation::Greater, "no_key"));
        }
    }
    for t in ["battery_try", "blocks_ranking_try", "cover_blocks", "press_button"] {
        if has(t) {
            out.push(Expectation::new(t, "gt_classifier", Relation::AtLeast, "vanilla"));
        }
    }
    out
}

fn csv_line(r: &ResultRow) -> String {
    format!(
        "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{},{}",
        r.task,
        r.variant,
        r.successes,
        r.episodes,
        r.success_rate,
        r.wilson_lo,
        r.wilson_hi,
        r.mean_steps,
        r.mean_planner_calls,
        r.seed,
        r.checkpoint_sha256
    )
}

pub fn rows_to_csv(rows: &[ResultRow]) -> String {
    let mut s = format!("{RESULTS_HEADER}\n");
    for r in rows {
        s.push_str(&csv_line(r));
        s.push('\n');
    }
    s
}

/// Parse results.csv text.
pub fn read_rows_csv(text: &str) -> Result<Vec<ResultRow>, HarnessError> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(RESULTS_HEADER) {
        return Err(HarnessError::Schema("missing or unexpected header".into()));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.trim().split(',').collect();
        let err = |what: &str| HarnessError::Schema(format!("line {}: {what}", i + 2));
        if f.len() != 11 {
            return Err(err(&format!("expected 11 fields, found {}", f.len())));
        }
        let int = |s: &str, name: &str| s.parse::<usize>().map_err(|_| err(name));
        let real = |s: &str, name: &str| s.parse::<f64>().map_err(|_| err(name));
        let row = ResultRow {
            task: f[0].into(),
            variant: f[1].into(),
            successes: int(f[2], "successes")?,
            episodes: int(f[3], "episodes")?,
            success_rate: real(f[4], "success_rate")?,
            wilson_lo: real(f[5], "wilson_lo")?,
            wilson_hi: real(f[6], "wilson_hi")?,
            mean_steps: real(f[7], "mean_steps")?,
            mean_planner_calls: real(f[8], "mean_planner_calls")?,
            seed: f[9].parse().map_err(|_| err("seed"))?,
            checkpoint_sha256: f[10].into(),
        };
        if row.successes > row.episodes || !(0.0..=1.0).contains(&row.success_rate) || row.wilson_lo > row.wilson_hi {
            return Err(err("inconsistent counts or interval"));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn render_markdown(rows: &[ResultRow], expectations: &[Expectation]) -> String {
    let mut s = String::from("# Results\n\n");
    s.push_str("Published reference values come from a robot-scale system and are shown for orientation only; ");
    s.push_str("they are not comparable to the numbers measured here.\n\n");
    s.push_str("| task | variant | success | 95% interval | mean steps | mean planner calls | published reference |\n");
    s.push_str("|---|---|---|---|---|---|---|\n");
    for r in rows {
        let reference = PUBLISHED_REFERENCE
            .iter()
            .find(|(t, v, _)| *t == r.task && *v == r.variant)
            .map_or("n/a".to_string(), |(_, _, p)| format!("{p:.0}% ({REFERENCE_SOURCE})"));
        let _ = writeln!(
            s,
            "| {} | {} | {}/{} ({:.1}%) | [{:.3}, {:.3}] | {:.2} | {:.2} | {} |",
            r.task,
            r.variant,
            r.successes,
            r.episodes,
            100.0 * r.success_rate,
            r.wilson_lo,
            r.wilson_hi,
            r.mean_steps,
            r.mean_planner_calls,
            reference
        );
    }
    s.push_str("\n## Directional checks\n\n");
    if expectations.is_empty() {
        s.push_str("No expected orderings were given.\n");
    }
    for e in expectations {
        let mark = match e.judge(rows).holds {
            Some(true) => "✓",
            Some(false) => "✗",
            None => "? (missing rows)",
        };
        let _ = writeln!(s, "- {mark} {}", e.describe());
    }
    s
}

#[derive(Serialize)]
struct JsonReport<'a, C: Serialize> {
    config: &'a C,
    rows: &'a [ResultRow],
    verdicts: Vec<Verdict>,
}

/// Write results.csv, results.json and summary.md into `dir`.
pub fn write_report<C: Serialize>(dir: &Path, rows: &[ResultRow], config: &C, expectations: &[Expectation]) -> Result<(), HarnessError> {
    if rows.is_empty() {
        return Err(HarnessError::EmptyRows);
    }
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("results.csv"), rows_to_csv(rows))?;
    let verdicts = expectations.iter().map(|e| e.judge(rows)).collect();
    let json = serde_json::to_string_pretty(&JsonReport { config, rows, verdicts })?;
    std::fs::write(dir.join("results.json"), json)?;
    std::fs::write(dir.join("summary.md"), render_markdown(rows, expectations))?;
    Ok(())
}
