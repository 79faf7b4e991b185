use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--set", "iterations=40",
    "--set", "planner_iterations=20",
    "--set", "batch_size=4",
    "--set", "d_z=8",
    "--set", "encoder_hidden=16",
    "--set", "denoiser_hidden=16",
    "--set", "diffusion_steps=4",
    "--set", "log_every=10",
];

fn rmem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rmem")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().copied().chain(SMALL.iter().copied()).collect()
}

#[test]
fn gen_writes_a_demo_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = rmem(&["gen", "--task", "put_back_block", "--demos", "50", "--seed", "0", "--out", out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let set = rmem_core::tasks::load_demoset(&dir.path().join("put_back_block/demos.rmbd")).unwrap();
    assert_eq!(set.demos.len(), 50);
}

#[test]
fn tmc_reports_one_slot_for_reduced_put_back() {
    let o = rmem(&["tmc", "--task", "put_back_block_reduced"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["tmc"], 1);
    assert_eq!(v["certified"], true);
}

#[test]
fn eval_without_checkpoint_is_a_usage_error() {
    let o = rmem(&["eval", "--task", "put_back_block"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--checkpoint"));
}

#[test]
fn unknown_flag_prints_usage_and_exits_one() {
    let o = rmem(&["gen", "--frobnicate"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn validation_and_io_errors_have_distinct_codes() {
    assert_eq!(code(&rmem(&["gen", "--task", "stack_cups"])), 1);
    assert_eq!(code(&rmem(&["gen", "--demos", "0"])), 1);
    assert_eq!(code(&rmem(&["gen", "--config", "/nonexistent/experiment.cfg"])), 2);
    assert_eq!(code(&rmem(&["eval", "--checkpoint", "/nonexistent/vanilla.mem0"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "demos = 5\nwarp_factor = 9\n").unwrap();
    let o = rmem(&["gen", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    std::fs::write(&cfg, "task = swap_t\ndemos = 7\n").unwrap();
    let out = dir.path().to_str().unwrap();
    let o = rmem(&["gen", "--config", cfg.to_str().unwrap(), "--demos", "3", "--out", out]);
    assert_eq!(code(&o), 0);
    let set = rmem_core::tasks::load_demoset(&dir.path().join("swap_t/demos.rmbd")).unwrap();
    assert_eq!(set.demos.len(), 3);
}

fn pipeline(out: &Path) -> Vec<u8> {
    let out = out.to_str().unwrap();
    let base = ["--task", "press_button", "--seed", "0", "--out", out, "--demos", "5", "--episodes", "10"];
    for cmd in ["gen", "train"] {
        let mut args = vec![cmd];
        args.extend(with_small(&base));
        let o = rmem(&args);
        assert_eq!(code(&o), 0, "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let ckpt = format!("{out}/press_button/vanilla.mem0");
    let mut args = vec!["eval", "--checkpoint", &ckpt];
    args.extend(with_small(&base));
    let o = rmem(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let row: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(row["episodes"], 10);
    std::fs::read(format!("{out}/press_button/eval_vanilla/results.csv")).unwrap()
}

#[test]
fn gen_train_eval_is_byte_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = pipeline(a.path());
    assert_eq!(first, pipeline(b.path()));
    assert!(String::from_utf8(first).unwrap().starts_with("task,variant,successes"));

    let ckpt = a.path().join("press_button/vanilla.mem0");
    let out = a.path().to_str().unwrap();
    let o = rmem(&["eval", "--task", "press_button", "--out", out, "--demos", "5", "--episodes", "4", "--variant", "gt_classifier", "--checkpoint", ckpt.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = rmem(&["eval", "--task", "put_back_block", "--checkpoint", ckpt.to_str().unwrap()]);
    assert_eq!(code(&o), 1);

    let rows = a.path().join("press_button/eval_vanilla/results.csv");
    let report_dir = a.path().join("report");
    let o = rmem(&["report", "--rows", rows.to_str().unwrap(), "--out", report_dir.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(report_dir.join("summary.md").exists());
    std::fs::write(&rows, "task,variant\n").unwrap();
    let o = rmem(&["report", "--rows", rows.to_str().unwrap(), "--out", report_dir.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

#[test]
fn ablate_writes_a_combined_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let mut args = vec!["ablate", "--task", "put_back_block", "--out", out, "--demos", "3", "--episodes", "4"];
    args.extend(SMALL.iter().copied());
    let o = rmem(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    let md = std::fs::read_to_string(dir.path().join("summary.md")).unwrap();
    assert!(md.contains("vanilla > markovian on put_back_block"));
}
