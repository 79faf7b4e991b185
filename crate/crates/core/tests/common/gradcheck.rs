//! Central finite-difference checks of every differentiable nn operation,
//! run in f64. Each check returns its worst relative error.

use rmem_core::nn::{
    ddpm_loss, gelu, gelu_grad, mean_pool, mean_pool_backward, CrossAttention, Denoiser, DiffusionSchedule, Linear, Mlp,
    ParamStore, Tensor,
};
use rmem_core::rng::SplitMix64;

pub const H: f64 = 1e-3;
pub const TOL: f64 = 1e-4;
pub const SEEDS: u64 = 20;

/// Relative error with the denominator floored, so entries whose true
/// gradient is near zero are judged on absolute error instead.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-2)
}

pub fn rand_vec(rng: &mut SplitMix64, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.normal()).collect()
}

/// Compare analytic parameter gradients with central differences of `loss`.
fn check_params(store: &mut ParamStore<f64>, loss: &dyn Fn(&ParamStore<f64>) -> f64) -> f64 {
    let analytic = store.flat_grads();
    let mut worst = 0.0f64;
    for k in 0..analytic.len() {
        let orig = *store.scalar_mut(k);
        *store.scalar_mut(k) = orig + H;
        let up = loss(store);
        *store.scalar_mut(k) = orig - H;
        let down = loss(store);
        *store.scalar_mut(k) = orig;
        let num = (up - down) / (2.0 * H);
        worst = worst.max(rel_err(analytic[k], num));
    }
    worst
}

/// Compare an analytic input gradient with central differences.
fn check_input(x: &[f64], analytic: &[f64], loss: &dyn Fn(&[f64]) -> f64) -> f64 {
    let mut x = x.to_vec();
    let mut worst = 0.0f64;
    for k in 0..x.len() {
        let orig = x[k];
        x[k] = orig + H;
        let up = loss(&x);
        x[k] = orig - H;
        let down = loss(&x);
        x[k] = orig;
        let num = (up - down) / (2.0 * H);
        worst = worst.max(rel_err(analytic[k], num));
    }
    worst
}

fn weighted(y: &[f64], r: &[f64]) -> f64 {
    y.iter().zip(r).map(|(a, b)| a * b).sum()
}

pub fn gelu_check() -> f64 {
    let mut worst = 0.0f64;
    for i in -60..=60 {
        let x = i as f64 * 0.1;
        let num = (gelu(x + H) - gelu(x - H)) / (2.0 * H);
        worst = worst.max(rel_err(gelu_grad(x), num));
    }
    worst
}

pub fn linear() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let mut rng = SplitMix64::new(seed);
        let mut store = ParamStore::<f64>::new();
        let lin = Linear::new(&mut store, "l", 5, 4, &mut rng).unwrap();
        for v in store.value_mut(lin.b) {
            *v = rng.normal();
        }
        let x = rand_vec(&mut rng, 5);
        let r = rand_vec(&mut rng, 4);
        let gx = lin.backward(&mut store, &x, &r);
        worst = worst.max(check_params(&mut store, &|s| weighted(&lin.forward(s, &x).unwrap(), &r)));
        let s2 = store.clone();
        worst = worst.max(check_input(&x, &gx, &|x| weighted(&lin.forward(&s2, x).unwrap(), &r)));
    }
    worst
}

pub fn mlp() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let mut rng = SplitMix64::new(100 + seed);
        let mut store = ParamStore::<f64>::new();
        let mlp = Mlp::new(&mut store, "m", &[6, 7, 5, 3], &mut rng).unwrap();
        let x = rand_vec(&mut rng, 6);
        let r = rand_vec(&mut rng, 3);
        let (_, cache) = mlp.forward_cached(&store, &x).unwrap();
        let gx = mlp.backward(&mut store, &cache, &r);
        worst = worst.max(check_params(&mut store, &|s| weighted(&mlp.forward(s, &x).unwrap(), &r)));
        let s2 = store.clone();
        worst = worst.max(check_input(&x, &gx, &|x| weighted(&mlp.forward(&s2, x).unwrap(), &r)));
    }
    worst
}

pub fn mean_pool_check() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let mut rng = SplitMix64::new(200 + seed);
        let rows = 1 + seed as usize % 4;
        let x = rand_vec(&mut rng, rows * 3);
        let r = rand_vec(&mut rng, 3);
        let g = mean_pool_backward(rows, &r);
        let f = |x: &[f64]| weighted(&mean_pool(&Tensor::from_vec(&[rows, 3], x.to_vec()).unwrap()).unwrap(), &r);
        worst = worst.max(check_input(&x, &g.data, &f));
    }
    worst
}

pub fn cross_attention() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let mut rng = SplitMix64::new(300 + seed);
        let d = 4;
        let mut store = ParamStore::<f64>::new();
        let att = CrossAttention::new(&mut store, "a", d, &mut rng).unwrap();
        for name in ["a.q.b", "a.k.b", "a.v.b", "a.o.b"] {
            let id = store.id(name).unwrap();
            for v in store.value_mut(id) {
                *v = 0.3 * rng.normal();
            }
        }
        let n_mem = 1 + seed as usize % 4;
        let z = rand_vec(&mut rng, d);
        let mem: Vec<Vec<f64>> = (0..n_mem).map(|_| rand_vec(&mut rng, d)).collect();
        let r = rand_vec(&mut rng, d);
        let (_, cache) = att.forward_cached(&store, &z, &mem).unwrap();
        let (gz, gmem) = att.backward(&mut store, &cache, &z, &mem, &r);
        worst = worst.max(check_params(&mut store, &|s| weighted(&att.forward(s, &z, &mem).unwrap(), &r)));
        let s2 = store.clone();
        worst = worst.max(check_input(&z, &gz, &|q| weighted(&att.forward(&s2, q, &mem).unwrap(), &r)));
        let flat: Vec<f64> = mem.concat();
        let gflat: Vec<f64> = gmem.concat();
        let f = |m: &[f64]| {
            let mem: Vec<Vec<f64>> = m.chunks(d).map(|c| c.to_vec()).collect();
            weighted(&att.forward(&s2, &z, &mem).unwrap(), &r)
        };
        worst = worst.max(check_input(&flat, &gflat, &f));
    }
    worst
}

pub fn ddpm_loss_check() -> f64 {
    let mut worst = 0.0f64;
    let schedule = DiffusionSchedule::new(4);
    for seed in 0..SEEDS {
        let mut rng = SplitMix64::new(400 + seed);
        let mut store = ParamStore::<f64>::new();
        let den = Denoiser::new(&mut store, "d", 2, 2, 3, 4, &[6], &mut rng).unwrap();
        // Chunks and conditions live in [-1, 1], as they do in the policy.
        let clean = Tensor::from_vec(&[2, 2], (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
        let cond: Vec<f64> = (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let out = ddpm_loss(&den, &mut store, &schedule, &clean, &cond, seed, Some(1.0)).unwrap();
        let loss = |s: &ParamStore<f64>, c: &[f64]| {
            let mut s = s.clone();
            ddpm_loss(&den, &mut s, &schedule, &clean, c, seed, None).unwrap().loss
        };
        worst = worst.max(check_params(&mut store, &|s| loss(s, &cond)));
        let s2 = store.clone();
        worst = worst.max(check_input(&cond, &out.g_cond, &|c| loss(&s2, c)));
    }
    worst
}

/// Every check, by operation name.
pub const CHECKS: [(&str, fn() -> f64); 6] = [
    ("gelu", gelu_check),
    ("linear", linear),
    ("mlp", mlp),
    ("mean_pool", mean_pool_check),
    ("cross_attention", cross_attention),
    ("ddpm_loss", ddpm_loss_check),
];
