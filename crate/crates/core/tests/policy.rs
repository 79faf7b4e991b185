mod common;

use common::{check_episode, stub_config, stub_model};
use proptest::prelude::*;
use rmem_core::policy::{
    first_termination, sidecar_path, Ablations, EndWindow, Mem0Agent, Mem0Model, Mem0State, Override, PolicyConfig,
    PolicyError, TaskDims, VARIANTS,
};
use rmem_core::pomdp::{featurize, reset, rollout};
use rmem_core::tasks::{build_task, TaskParams};

fn task(name: &str) -> rmem_core::pomdp::TaskSpec {
    build_task(name, &TaskParams::default()).unwrap()
}

/// Straightforward scan: the first index whose trailing `len` bits since the
/// previous firing are all set.
fn brute_first(bits: &[bool], len: usize) -> Option<usize> {
    let mut run = 0;
    for (i, &b) in bits.iter().enumerate() {
        run = if b { run + 1 } else { 0 };
        if run >= len {
            return Some(i);
        }
    }
    None
}

#[test]
fn end_window_exhaustive() {
    for len in [1, 3, 8] {
        for n in 0..=12 {
            for mask in 0u32..(1 << n) {
                let bits: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
                assert_eq!(first_termination(&bits, len), brute_first(&bits, len), "L={len} bits={bits:?}");
            }
        }
    }
}

#[test]
fn end_window_fixed_cases() {
    let mut bits = vec![true; 7];
    bits.push(false);
    assert_eq!(first_termination(&bits, 8), None);
    assert_eq!(first_termination(&[true; 8], 8), Some(7));
    let alternating: Vec<bool> = (0..40).map(|i| i % 2 == 0).collect();
    for len in 2..=8 {
        assert_eq!(first_termination(&alternating, len), None);
    }
    assert_eq!(first_termination(&alternating, 1), Some(0));
}

#[test]
fn end_window_needs_fresh_bits_after_firing() {
    let mut w = EndWindow::new(2);
    assert!(!w.push(true));
    assert!(w.push(true));
    assert!(!w.push(true));
    assert!(w.push(true));
    assert!(!w.push(false));
}

#[test]
fn sliding_window_is_fifo() {
    for k in [1, 3, 5] {
        let cfg = PolicyConfig { sliding_capacity: k, ..PolicyConfig::default() };
        let mut s = Mem0State::new(&cfg);
        for t in 0..12 {
            s.update_sliding(vec![t as f32]);
            assert_eq!(s.sliding.len(), (t + 1).min(k));
            let expected: Vec<f32> = ((t + 1).saturating_sub(k)..=t).map(|x| x as f32).collect();
            let got: Vec<f32> = s.sliding.iter().map(|z| z[0]).collect();
            assert_eq!(got, expected);
        }
    }
}

#[test]
fn begin_subtask_requires_empty_buffers() {
    let mut s = Mem0State::new(&PolicyConfig::default());
    s.begin_subtask(vec![1.0]).unwrap();
    assert!(matches!(s.begin_subtask(vec![2.0]), Err(PolicyError::Contract(_))));
    for _ in 0..50 {
        s.update_sliding(vec![3.0]);
    }
    assert_eq!(s.anchor.as_deref(), Some(&[1.0][..]));
    s.reset_buffers();
    assert!(s.buffers_empty());
    s.begin_subtask(vec![2.0]).unwrap();
}

#[test]
fn empty_memories_pass_the_query_through() {
    let spec = task("put_back_block");
    let model = stub_model(spec.as_ref(), stub_config("vanilla"), 3);
    let (_, obs) = reset(spec.as_ref(), 0);
    let z = model.encode(&featurize(spec.as_ref(), &obs)).unwrap();
    let text = model.text_id(0);
    let cond = model.fuse(&z, &[], &[], text).unwrap();
    let mut expected = z.clone();
    expected.extend_from_slice(&z);
    expected.extend_from_slice(model.text_latent(text));
    assert_eq!(cond, expected);
}

#[test]
fn no_anchor_matches_forced_empty_anchor() {
    for name in ["put_back_block", "press_button", "cover_blocks"] {
        let spec = task(name);
        let vanilla = stub_model(spec.as_ref(), stub_config("vanilla"), 11);
        let mut ablated = stub_model(spec.as_ref(), stub_config("no_anchor"), 11);
        ablated.replace_executor(&vanilla).unwrap();
        ablated.replace_planner(&vanilla).unwrap();
        for seed in 0..5 {
            let mut a = Mem0Agent::new(&ablated).with_probes();
            let mut b = Mem0Agent::new(&vanilla).with_overrides(Override { empty_anchor: true, empty_sliding: false }).with_probes();
            rollout(spec.as_ref(), &mut a, seed, spec.horizon()).unwrap();
            rollout(spec.as_ref(), &mut b, seed, spec.horizon()).unwrap();
            assert_eq!(a.probes().len(), b.probes().len());
            for (pa, pb) in a.probes().iter().zip(b.probes()) {
                let bits = |c: &[f32]| c.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
                assert_eq!(bits(&pa.cond), bits(&pb.cond), "{name} seed {seed} t {}", pa.t);
                assert_eq!(pa.action, pb.action);
            }
        }
    }
}

#[test]
fn no_sliding_matches_forced_empty_window() {
    let spec = task("put_back_block");
    let vanilla = stub_model(spec.as_ref(), stub_config("vanilla"), 5);
    let mut ablated = stub_model(spec.as_ref(), stub_config("no_sliding"), 5);
    ablated.replace_executor(&vanilla).unwrap();
    for seed in 0..5 {
        let mut a = Mem0Agent::new(&ablated).with_probes();
        let mut b = Mem0Agent::new(&vanilla).with_overrides(Override { empty_anchor: false, empty_sliding: true }).with_probes();
        rollout(spec.as_ref(), &mut a, seed, spec.horizon()).unwrap();
        rollout(spec.as_ref(), &mut b, seed, spec.horizon()).unwrap();
        let ca: Vec<_> = a.probes().iter().map(|p| (p.cond.clone(), p.action)).collect();
        let cb: Vec<_> = b.probes().iter().map(|p| (p.cond.clone(), p.action)).collect();
        assert_eq!(ca, cb);
    }
}

#[test]
fn mechanism_invariants_on_stub_episodes() {
    let tasks = ["put_back_block", "press_button", "battery_try", "cover_blocks", "blocks_ranking_try", "swap_blocks"];
    let (mut episodes, mut with_resets, mut replans) = (0, 0, 0);
    for (i, name) in tasks.iter().enumerate() {
        let spec = task(name);
        for variant in VARIANTS {
            let model = stub_model(spec.as_ref(), stub_config(variant), 100 + i as u64);
            for seed in 0..4 {
                let st = check_episode(&model, spec.as_ref(), seed).unwrap_or_else(|e| panic!("{name}/{variant} seed {seed}: {e}"));
                episodes += 1;
                with_resets += (st.terminations > 0) as usize;
                replans += st.planner_calls - 1;
            }
        }
    }
    assert_eq!(episodes, 144);
    assert!(with_resets > 10 && with_resets < episodes, "{with_resets} episodes with terminations");
    assert!(replans > 10, "{replans} replans");
}

#[test]
fn end_window_longer_than_one_still_resets_cleanly() {
    let spec = task("press_button");
    for l in [2, 3] {
        let cfg = PolicyConfig { end_window: l, ..stub_config("vanilla") };
        for m in 0..5 {
            let model = stub_model(spec.as_ref(), cfg.clone(), 40 + m);
            check_episode(&model, spec.as_ref(), m).unwrap();
        }
    }
}

fn denoiser_calls(delta: usize, seed: u64) -> (usize, usize) {
    let spec = task("put_back_block");
    let cfg = PolicyConfig { delta, decomposition: Some(false), ..stub_config("vanilla") };
    let model = stub_model(spec.as_ref(), cfg, 9);
    let mut agent = Mem0Agent::new(&model);
    let trace = rollout(spec.as_ref(), &mut agent, seed, spec.horizon()).unwrap();
    (agent.state().denoiser_calls, trace.step_count)
}

#[test]
fn chunk_reuse_counts() {
    let h = PolicyConfig::default().horizon;
    for seed in 0..10 {
        let (calls, steps) = denoiser_calls(1, seed);
        assert_eq!(calls, steps);
        let (calls, steps) = denoiser_calls(h, seed);
        assert_eq!(calls, steps.div_ceil(h));
    }
}

#[test]
fn markovian_resamples_every_step() {
    let spec = task("cover_blocks");
    let model = stub_model(spec.as_ref(), stub_config("markovian"), 2);
    assert!(!model.dims.decomposed);
    let mut agent = Mem0Agent::new(&model);
    let trace = rollout(spec.as_ref(), &mut agent, 3, spec.horizon()).unwrap();
    assert_eq!(agent.state().denoiser_calls, trace.step_count);
    assert_eq!(trace.planner_calls, 1);
    assert!(model.proprio(Some(rmem_core::pomdp::ActionId(1)), 5).iter().all(|&x| x == 0.0));
}

#[test]
fn single_subtask_tasks_plan_once() {
    for name in ["put_back_block", "rearrange_blocks", "swap_t"] {
        let spec = task(name);
        let model = stub_model(spec.as_ref(), stub_config("vanilla"), 1);
        for seed in 0..5 {
            let mut agent = Mem0Agent::new(&model);
            let trace = rollout(spec.as_ref(), &mut agent, seed, spec.horizon()).unwrap();
            assert_eq!(trace.planner_calls, 1, "{name}");
        }
    }
}

#[test]
fn key_memory_is_order_sensitive_and_masked_under_no_key() {
    let spec = task("press_button");
    let model = stub_model(spec.as_ref(), stub_config("vanilla"), 4);
    let (_, o) = reset(spec.as_ref(), 0);
    let f = featurize(spec.as_ref(), &o);
    let mut g = f.clone();
    g[0] = 1.0 - g[0];
    let ab = vec![(0, f.clone()), (1, g.clone())];
    let ba = vec![(1, g.clone()), (0, f.clone())];
    assert_ne!(model.planner_input(&f, &ab, true).unwrap(), model.planner_input(&f, &ba, true).unwrap());
    assert_eq!(model.planner_input(&f, &ab, false).unwrap(), model.planner_input(&f, &[], false).unwrap());
    assert_eq!(model.planner_input(&f, &[], true).unwrap(), model.planner_input(&f, &[], false).unwrap());
}

#[test]
fn exec_loss_reaches_both_memory_branches() {
    let spec = task("put_back_block");
    let mut model = stub_model(spec.as_ref(), stub_config("vanilla"), 8);
    let demos = rmem_core::tasks::generate_demos(spec.as_ref(), 2, 0).unwrap();
    let samples = model.exec_samples(spec.as_ref(), &demos.demos);
    let s = samples.iter().find(|s| s.anchor.is_some() && !s.sliding.is_empty()).unwrap().clone();
    model.exec_loss(&s, 1, Some(1.0)).unwrap();
    let store = model.exec_store();
    let norm = |prefix: &str| -> f32 {
        store.params().iter().filter(|p| p.name.starts_with(prefix)).flat_map(|p| p.grad.iter()).map(|g| g * g).sum()
    };
    for prefix in ["exec.enc", "exec.text", "exec.anchor", "exec.slide", "exec.den", "exec.clf"] {
        assert!(norm(prefix) > 0.0, "{prefix} received no gradient");
    }
}

#[test]
fn checkpoint_round_trip() {
    let spec = task("press_button");
    let model = stub_model(spec.as_ref(), stub_config("vanilla"), 21);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.mem0");
    model.save(&path).unwrap();
    assert!(sidecar_path(&path).exists());
    let loaded = Mem0Model::load(&path).unwrap();
    assert_eq!(loaded.weight_bytes(), model.weight_bytes());
    assert_eq!(loaded.config, model.config);
    for seed in 0..3 {
        let a = rmem_core::policy::run_episode(&model, spec.as_ref(), seed).unwrap();
        let b = rmem_core::policy::run_episode(&loaded, spec.as_ref(), seed).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn checkpoint_bound_to_wrong_task_is_rejected() {
    let spec = task("press_button");
    let model = stub_model(spec.as_ref(), stub_config("vanilla"), 21);
    let other = task("put_back_block");
    assert!(matches!(model.check_task(other.as_ref()), Err(PolicyError::TaskMismatch { .. })));
    let mut agent = Mem0Agent::new(&model);
    let trace = rollout(other.as_ref(), &mut agent, 0, other.horizon()).unwrap();
    assert!(trace.failure.is_some() && !trace.success);
}

#[test]
fn tampered_sidecar_names_the_mismatched_parameter() {
    let spec = task("press_button");
    let model = stub_model(spec.as_ref(), stub_config("vanilla"), 21);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.mem0");
    model.save(&path).unwrap();
    let side = sidecar_path(&path);
    let text = std::fs::read_to_string(&side).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["config"]["encoder_hidden"] = serde_json::json!(17);
    std::fs::write(&side, v.to_string()).unwrap();
    let err = Mem0Model::load(&path).unwrap_err();
    assert!(err.to_string().contains("exec.enc.0.w"), "{err}");
    std::fs::remove_file(&side).unwrap();
    assert!(matches!(Mem0Model::load(&path), Err(PolicyError::Io(_))));
}

#[test]
fn variants_map_to_ablations() {
    assert_eq!(Ablations::for_variant("vanilla"), Some(Ablations::default()));
    assert!(Ablations::for_variant("no_key").unwrap().no_key);
    assert!(Ablations::for_variant("bogus").is_none());
    let m = Ablations::for_variant("markovian").unwrap();
    assert!(!m.anchor() && !m.sliding() && !m.key());
    let spec = task("press_button");
    let cfg = stub_config("markovian");
    assert!(!TaskDims::of(spec.as_ref(), &cfg).unwrap().decomposed);
    assert_eq!(cfg.effective_delta(), 1);
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        PolicyConfig { delta: 9, ..PolicyConfig::default() },
        PolicyConfig { sliding_capacity: 0, ..PolicyConfig::default() },
        PolicyConfig { end_window: 0, ..PolicyConfig::default() },
        PolicyConfig { time_embedding: 5, ..PolicyConfig::default() },
        PolicyConfig { diffusion_steps: 0, ..PolicyConfig::default() },
    ];
    for c in bad {
        assert!(matches!(c.validate(), Err(PolicyError::Config(_))), "{c:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn end_window_matches_scan(bits in proptest::collection::vec(any::<bool>(), 0..40), len in 1usize..10) {
        prop_assert_eq!(first_termination(&bits, len), brute_first(&bits, len));
    }

    #[test]
    fn stub_episodes_keep_invariants(
        task_ix in 0usize..4,
        variant_ix in 0usize..6,
        model_seed in 0u64..1000,
        seed in 0u64..1000,
        k in 1usize..5,
    ) {
        let name = ["put_back_block", "press_button", "battery_try", "cover_blocks"][task_ix];
        let spec = task(name);
        let cfg = PolicyConfig { sliding_capacity: k, ..stub_config(VARIANTS[variant_ix]) };
        let model = stub_model(spec.as_ref(), cfg, model_seed);
        let r = check_episode(&model, spec.as_ref(), seed);
        prop_assert!(r.is_ok(), "{}", r.unwrap_err());
    }
}
