mod common;

use common::gradcheck::{rand_vec, CHECKS, TOL};
use rmem_core::nn::{
    ddpm_loss, ddpm_sample, ddpm_sample_greedy, load_params, load_params_into, mean_pool, params_from_bytes,
    params_to_bytes, save_params, Adam, CrossAttention, Denoiser, DiffusionSchedule, EpsModel, Linear, Mlp, NnError,
    ParamStore, Tensor,
};
use rmem_core::rng::SplitMix64;

use proptest::prelude::*;

fn assert_check(name: &str) {
    let (_, check) = CHECKS.iter().find(|(n, _)| *n == name).expect("registered check");
    let worst = check();
    assert!(worst < TOL, "{name}: worst relative error {worst}");
}

#[test]
fn gelu_gradient() {
    assert_check("gelu");
}

#[test]
fn linear_gradients() {
    assert_check("linear");
}

#[test]
fn mlp_gradients() {
    assert_check("mlp");
}

#[test]
fn mean_pool_gradients() {
    assert_check("mean_pool");
}

#[test]
fn cross_attention_gradients() {
    assert_check("cross_attention");
}

#[test]
fn ddpm_loss_gradients() {
    assert_check("ddpm_loss");
}

#[test]
fn identity_layer_passes_input_through() {
    let mut rng = SplitMix64::new(1);
    let mut store = ParamStore::<f32>::new();
    let lin = Linear::new(&mut store, "id", 3, 3, &mut rng).unwrap();
    let w = store.value_mut(lin.w);
    w.iter_mut().enumerate().for_each(|(i, v)| *v = if i % 4 == 0 { 1.0 } else { 0.0 });
    assert_eq!(lin.forward(&store, &[0.5, -2.0, 3.0]).unwrap(), vec![0.5, -2.0, 3.0]);
    assert_eq!(lin.forward(&store, &[0.0; 3]).unwrap(), vec![0.0; 3]);
    assert!(matches!(lin.forward(&store, &[1.0; 2]), Err(NnError::Shape { .. })));
}

#[test]
fn mean_pool_basics() {
    let one = Tensor::from_vec(&[1, 3], vec![1.0f32, 2.0, 3.0]).unwrap();
    assert_eq!(mean_pool(&one).unwrap(), vec![1.0, 2.0, 3.0]);
    let sym = Tensor::from_vec(&[2, 2], vec![1.5f32, -4.0, -1.5, 4.0]).unwrap();
    assert_eq!(mean_pool(&sym).unwrap(), vec![0.0, 0.0]);
    assert!(matches!(mean_pool(&Tensor::<f32>::zeros(&[0, 2])), Err(NnError::Empty(_))));
}

#[test]
fn attention_conventions() {
    let mut rng = SplitMix64::new(2);
    let mut store = ParamStore::<f32>::new();
    let att = CrossAttention::new(&mut store, "a", 4, &mut rng).unwrap();
    let z = vec![0.1f32, -0.2, 0.3, 0.4];
    assert_eq!(att.forward(&store, &z, &[]).unwrap(), z);

    let v = vec![1.0f32, 2.0, -1.0, 0.5];
    let (out, cache) = att.forward_cached(&store, &z, std::slice::from_ref(&v)).unwrap();
    assert_eq!(cache.weights, vec![1.0]);
    let mut expect = att.wo.forward(&store, &att.wv.forward(&store, &v).unwrap()).unwrap();
    expect.iter_mut().zip(&z).for_each(|(e, q)| *e += q);
    assert_eq!(out, expect);
    assert!(att.forward(&store, &z[..3], &[]).is_err());
}

#[test]
fn schedule_invariants() {
    for steps in [1, 2, 4, 16, 100, 1000] {
        let s = DiffusionSchedule::new(steps);
        assert!(s.betas.iter().all(|&b| b > 0.0 && b < 1.0), "{steps}");
        assert!(s.alpha_bars.windows(2).all(|w| w[1] < w[0]), "{steps}");
        assert!(*s.alpha_bars.last().unwrap() < 1e-3);
    }
    let full = DiffusionSchedule::new(1000);
    assert!((full.betas[0] - 1e-4).abs() < 1e-12);
    assert!((full.betas[999] - 2e-2).abs() < 1e-9);
}

/// Predicts the exact noise for a known clean chunk.
struct OracleEps {
    x0: Vec<f64>,
    schedule: DiffusionSchedule,
}

impl EpsModel<f64> for OracleEps {
    type Cache = ();

    fn chunk_len(&self) -> usize {
        self.x0.len()
    }

    fn forward(&self, _: &ParamStore<f64>, x_t: &[f64], t: usize, _: &[f64]) -> Result<(Vec<f64>, ()), NnError> {
        let ab = self.schedule.alpha_bars[t];
        Ok((x_t.iter().zip(&self.x0).map(|(x, c)| (x - ab.sqrt() * c) / (1.0 - ab).sqrt()).collect(), ()))
    }

    fn backward(&self, _: &mut ParamStore<f64>, _: &(), _: &[f64]) -> Vec<f64> {
        Vec::new()
    }
}

#[test]
fn oracle_denoiser_has_zero_loss_and_inverts() {
    let x0 = vec![0.5, -1.0, 0.25, 1.0];
    let clean = Tensor::from_vec(&[2, 2], x0.clone()).unwrap();
    for steps in [1, 4, 16] {
        let schedule = DiffusionSchedule::new(steps);
        let oracle = OracleEps { x0: x0.clone(), schedule: schedule.clone() };
        let mut store = ParamStore::new();
        for seed in 0..50 {
            let l = ddpm_loss(&oracle, &mut store, &schedule, &clean, &[], seed, None).unwrap();
            assert!(l.loss.abs() < 1e-18, "loss {}", l.loss);
        }
        let sample = ddpm_sample(&oracle, &store, &schedule, (2, 2), &[], 7).unwrap();
        let greedy = ddpm_sample_greedy(&oracle, &store, &schedule, (2, 2), &[]).unwrap();
        for ((a, g), b) in sample.data.iter().zip(&greedy.data).zip(&x0) {
            assert!((a - b).abs() < 1e-9);
            assert!((g - b).abs() < 1e-9);
        }
    }
    // One forward step followed by one reverse step returns the clean chunk.
    let schedule = DiffusionSchedule::new(1);
    let mut rng = SplitMix64::new(3);
    let eps = rand_vec(&mut rng, 4);
    let x1 = schedule.noise(&x0, 0, &eps);
    let back = schedule.reverse_step(&x1, 0, &eps, &[9.0; 4]);
    for (a, b) in back.iter().zip(&x0) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn sampling_is_deterministic() {
    let mut rng = SplitMix64::new(5);
    let mut store = ParamStore::<f32>::new();
    let den = Denoiser::new(&mut store, "d", 4, 3, 2, 8, &[16], &mut rng).unwrap();
    let s = DiffusionSchedule::new(16);
    let a = ddpm_sample(&den, &store, &s, (4, 3), &[0.3, -0.1], 11).unwrap();
    let b = ddpm_sample(&den, &store, &s, (4, 3), &[0.3, -0.1], 11).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.shape, vec![4, 3]);
    let c = ddpm_sample(&den, &store, &s, (4, 3), &[0.3, -0.1], 12).unwrap();
    assert_ne!(a, c);
    let g = ddpm_sample_greedy(&den, &store, &s, (4, 3), &[0.3, -0.1]).unwrap();
    assert_eq!(g, ddpm_sample_greedy(&den, &store, &s, (4, 3), &[0.3, -0.1]).unwrap());
    assert_ne!(g, ddpm_sample_greedy(&den, &store, &s, (4, 3), &[0.3, 0.1]).unwrap());
}

#[test]
fn overfits_a_single_chunk() {
    let mut rng = SplitMix64::new(8);
    let mut store = ParamStore::<f32>::new();
    let den = Denoiser::new(&mut store, "d", 4, 3, 2, 8, &[64, 64], &mut rng).unwrap();
    let schedule = DiffusionSchedule::new(16);
    let target = vec![1.0f32, -1.0, -1.0, -1.0, 1.0, -1.0, -1.0, -1.0, 1.0, 1.0, -1.0, -1.0];
    let clean = Tensor::from_vec(&[4, 3], target.clone()).unwrap();
    let cond = [0.5f32, -0.5];
    let mut adam = Adam::new(2e-3);
    let batch = 16;
    for it in 0..4000u64 {
        for b in 0..batch {
            ddpm_loss(&den, &mut store, &schedule, &clean, &cond, it * batch + b, Some(1.0 / batch as f32)).unwrap();
        }
        adam.step(&mut store);
    }
    for seed in 0..10 {
        let out = ddpm_sample(&den, &store, &schedule, (4, 3), &cond, seed).unwrap();
        let linf = out.data.iter().zip(&target).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(linf < 0.1, "seed {seed}: L∞ {linf}");
    }
}

#[test]
fn sampling_stays_finite_under_fuzzed_conditions() {
    let mut rng = SplitMix64::new(9);
    let mut store = ParamStore::<f32>::new();
    let den = Denoiser::new(&mut store, "d", 4, 3, 6, 8, &[32], &mut rng).unwrap();
    let schedule = DiffusionSchedule::new(16);
    for i in 0..1000u64 {
        let scale = [1e-3, 1.0, 1e3][i as usize % 3];
        let cond: Vec<f32> = (0..6).map(|_| (rng.normal() * scale) as f32).collect();
        let out = ddpm_sample(&den, &store, &schedule, (4, 3), &cond, i).unwrap();
        assert!(out.all_finite(), "condition {cond:?}");
    }
}

#[test]
fn adam_behaviour() {
    let mut store = ParamStore::<f64>::new();
    let w = store.add("w", Tensor::from_vec(&[1], vec![1.0]).unwrap()).unwrap();
    let mut adam = Adam::new(0.1);
    adam.step(&mut store);
    assert_eq!(store.value(w), &[1.0]);

    store.grad_mut(w)[0] = 2.0 * store.value(w)[0];
    adam.step(&mut store);
    assert!(store.value(w)[0] < 1.0);
    assert_eq!(store.grad(w), &[0.0]);

    let mut store = ParamStore::<f64>::new();
    let p = store.add("p", Tensor::from_vec(&[2], vec![1.5, -2.0]).unwrap()).unwrap();
    let mut adam = Adam::new(0.1);
    let loss = |v: &[f64]| v[0] * v[0] + 3.0 * v[1] * v[1];
    for _ in 0..200 {
        let v = store.value(p).to_vec();
        store.grad_mut(p).copy_from_slice(&[2.0 * v[0], 6.0 * v[1]]);
        adam.step(&mut store);
    }
    assert!(loss(store.value(p)) < 1e-4, "loss {}", loss(store.value(p)));
}

fn small_store(seed: u64, hidden: usize) -> ParamStore<f32> {
    let mut rng = SplitMix64::new(seed);
    let mut store = ParamStore::new();
    Mlp::new(&mut store, "enc", &[5, hidden, 3], &mut rng).unwrap();
    CrossAttention::new(&mut store, "att", 3, &mut rng).unwrap();
    store
}

#[test]
fn weight_file_round_trip() {
    let store = small_store(1, 8);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.bin");
    save_params(&store, &path).unwrap();
    let back = load_params(&path).unwrap();
    assert_eq!(back.len(), store.len());
    for (a, b) in store.params().iter().zip(back.params()) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.value.shape, b.value.shape);
        let bits = |t: &Tensor<f32>| t.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.value), bits(&b.value));
    }
    let mut other = small_store(2, 8);
    load_params_into(&mut other, &path).unwrap();
    assert_eq!(other.flat_values(), store.flat_values());
}

#[test]
fn weight_file_corruption_is_detected() {
    let bytes = params_to_bytes(&small_store(1, 8));
    for pos in [12, bytes.len() / 2, bytes.len() - 5] {
        let mut b = bytes.clone();
        b[pos] ^= 0x10;
        assert!(matches!(params_from_bytes(&b), Err(NnError::Checksum)), "flip at {pos}");
    }
    let mut b = bytes.clone();
    b[0] = b'X';
    assert!(matches!(params_from_bytes(&b), Err(NnError::BadMagic)));
    let mut b = bytes.clone();
    b[4] = 9;
    assert!(matches!(params_from_bytes(&b), Err(NnError::Version { found: 9, .. })));
    assert!(params_from_bytes(&bytes[..bytes.len() - 9]).is_err());
}

#[test]
fn mismatched_architecture_names_the_parameter() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.bin");
    save_params(&small_store(1, 8), &path).unwrap();
    let mut wider = small_store(1, 9);
    match load_params_into(&mut wider, &path) {
        Err(NnError::ShapeTable { name, .. }) => assert_eq!(name, "enc.0.w"),
        other => panic!("expected shape-table error, got {other:?}"),
    }
}

proptest! {
    #[test]
    fn attention_weights_form_a_distribution(seed in 0u64..10_000, n in 1usize..8) {
        let mut rng = SplitMix64::new(seed);
        let mut store = ParamStore::<f32>::new();
        let att = CrossAttention::new(&mut store, "a", 5, &mut rng).unwrap();
        let z: Vec<f32> = (0..5).map(|_| rng.normal_f32() * 3.0).collect();
        let mem: Vec<Vec<f32>> = (0..n).map(|_| (0..5).map(|_| rng.normal_f32() * 3.0).collect()).collect();
        let (out, cache) = att.forward_cached(&store, &z, &mem).unwrap();
        prop_assert!(cache.weights.iter().all(|&w| w >= 0.0));
        prop_assert!((cache.weights.iter().sum::<f32>() - 1.0).abs() < 1e-5);
        prop_assert!(out.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn ddpm_loss_is_nonnegative_and_finite(seed in 0u64..10_000) {
        let mut rng = SplitMix64::new(seed);
        let mut store = ParamStore::<f32>::new();
        let den = Denoiser::new(&mut store, "d", 2, 3, 2, 4, &[8], &mut rng).unwrap();
        let clean = Tensor::from_vec(&[2, 3], (0..6).map(|_| rng.normal_f32()).collect()).unwrap();
        let cond = [rng.normal_f32() * 10.0, rng.normal_f32()];
        let l = ddpm_loss(&den, &mut store, &DiffusionSchedule::new(16), &clean, &cond, seed, Some(1.0)).unwrap();
        prop_assert!(l.loss >= 0.0 && l.loss.is_finite());
        prop_assert!(store.grads_finite());
    }

    #[test]
    fn mlp_is_finite_on_finite_inputs(seed in 0u64..10_000, scale in -6i32..6) {
        let mut rng = SplitMix64::new(seed);
        let mut store = ParamStore::<f32>::new();
        let mlp = Mlp::new(&mut store, "m", &[4, 8, 4], &mut rng).unwrap();
        let x: Vec<f32> = (0..4).map(|_| rng.normal_f32() * 10f32.powi(scale)).collect();
        let (y, cache) = mlp.forward_cached(&store, &x).unwrap();
        prop_assert!(y.iter().all(|v| v.is_finite()));
        let g = mlp.backward(&mut store, &cache, &[1.0; 4]);
        prop_assert!(g.iter().all(|v| v.is_finite()));
    }
}
