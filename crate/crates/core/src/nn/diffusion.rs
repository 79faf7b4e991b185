//! Denoising diffusion over fixed-size action chunks with ε-prediction.

use super::layers::{Mlp, MlpCache};
use super::{check_len, NnError, ParamStore, Scalar, Tensor};
use crate::rng::SplitMix64;

/// Length of the base linear beta schedule that shorter schedules are respaced from.
pub const BASE_SCHEDULE_STEPS: usize = 1000;
pub const BETA_START: f64 = 1e-4;
pub const BETA_END: f64 = 2e-2;

/// Noise schedule with `steps` levels. Level `t` uses the cumulative alpha of
/// base step `round((t+1)·1000/steps) − 1` of the 1000-step linear schedule,
/// so the last level is (nearly) pure noise for any step count.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSchedule {
    pub steps: usize,
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn new(steps: usize) -> Self {
        assert!((1..=BASE_SCHEDULE_STEPS).contains(&steps), "diffusion step count out of range");
        let n = BASE_SCHEDULE_STEPS;
        let mut base = Vec::with_capacity(n);
        let mut ab = 1.0;
        for i in 0..n {
            let beta = BETA_START + (BETA_END - BETA_START) * i as f64 / (n - 1) as f64;
            ab *= 1.0 - beta;
            base.push(ab);
        }
        let alpha_bars: Vec<f64> = (0..steps)
            .map(|t| base[(((t + 1) * n) as f64 / steps as f64).round() as usize - 1])
            .collect();
        let mut prev = 1.0;
        let mut betas = Vec::with_capacity(steps);
        for &a in &alpha_bars {
            betas.push(1.0 - a / prev);
            prev = a;
        }
        let alphas = betas.iter().map(|b| 1.0 - b).collect();
        Self { steps, betas, alphas, alpha_bars }
    }

    fn alpha_bar_prev(&self, t: usize) -> f64 {
        if t == 0 { 1.0 } else { self.alpha_bars[t - 1] }
    }

    /// Closed-form forward process `x_t = √ᾱ_t x_0 + √(1−ᾱ_t) ε`.
    pub fn noise<T: Scalar>(&self, x0: &[T], t: usize, eps: &[T]) -> Vec<T> {
        let a = T::of(self.alpha_bars[t].sqrt());
        let s = T::of((1.0 - self.alpha_bars[t]).sqrt());
        x0.iter().zip(eps).map(|(&x, &e)| a * x + s * e).collect()
    }

    /// Clean-sample estimate from a noise prediction, clipped to `[-1, 1]`.
    pub fn predict_x0<T: Scalar>(&self, x_t: &[T], t: usize, eps_hat: &[T]) -> Vec<T> {
        let a = T::of(self.alpha_bars[t].sqrt());
        let s = T::of((1.0 - self.alpha_bars[t]).sqrt());
        x_t.iter()
            .zip(eps_hat)
            .map(|(&x, &e)| ((x - s * e) / a).max(-T::one()).min(T::one()))
            .collect()
    }

    /// One ancestral step from level `t` to `t − 1`. `z` is standard normal noise;
    /// it is ignored at `t = 0`, where the clipped clean estimate is returned.
    pub fn reverse_step<T: Scalar>(&self, x_t: &[T], t: usize, eps_hat: &[T], z: &[T]) -> Vec<T> {
        let x0 = self.predict_x0(x_t, t, eps_hat);
        if t == 0 {
            return x0;
        }
        let ab = self.alpha_bars[t];
        let ab_prev = self.alpha_bar_prev(t);
        let beta = self.betas[t];
        let c0 = T::of(ab_prev.sqrt() * beta / (1.0 - ab));
        let ct = T::of(self.alphas[t].sqrt() * (1.0 - ab_prev) / (1.0 - ab));
        let sigma = T::of((beta * (1.0 - ab_prev) / (1.0 - ab)).sqrt());
        x0.iter()
            .zip(x_t)
            .zip(z)
            .map(|((&a, &x), &n)| c0 * a + ct * x + sigma * n)
            .collect()
    }
}

/// Sinusoidal embedding of a diffusion level.
pub fn time_embedding<T: Scalar>(t: usize, dim: usize) -> Vec<T> {
    let half = dim / 2;
    let mut out = vec![T::zero(); dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half.max(1) as f64).exp();
        out[i] = T::of((t as f64 * freq).sin());
        out[half + i] = T::of((t as f64 * freq).cos());
    }
    out
}

/// Anything that predicts the noise in a noised chunk.
pub trait EpsModel<T: Scalar> {
    type Cache;

    fn chunk_len(&self) -> usize;

    fn forward(&self, store: &ParamStore<T>, x_t: &[T], t: usize, cond: &[T]) -> Result<(Vec<T>, Self::Cache), NnError>;

    /// Accumulates parameter gradients and returns the gradient for `cond`.
    fn backward(&self, store: &mut ParamStore<T>, cache: &Self::Cache, g_eps: &[T]) -> Vec<T>;
}

/// Time-embedded MLP over `[x_t ; cond ; temb(t)]`.
#[derive(Clone, Debug)]
pub struct Denoiser {
    pub horizon: usize,
    pub action_dim: usize,
    pub cond_dim: usize,
    pub temb_dim: usize,
    pub mlp: Mlp,
}

#[derive(Clone, Debug)]
pub struct DenoiserCache<T> {
    mlp: MlpCache<T>,
    x_len: usize,
    cond_dim: usize,
}

impl Denoiser {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        horizon: usize,
        action_dim: usize,
        cond_dim: usize,
        temb_dim: usize,
        hidden: &[usize],
        rng: &mut SplitMix64,
    ) -> Result<Self, NnError> {
        let x = horizon * action_dim;
        let mut dims = vec![x + cond_dim + temb_dim];
        dims.extend_from_slice(hidden);
        dims.push(x);
        let mlp = Mlp::new(store, name, &dims, rng)?;
        Ok(Self { horizon, action_dim, cond_dim, temb_dim, mlp })
    }
}

impl<T: Scalar> EpsModel<T> for Denoiser {
    type Cache = DenoiserCache<T>;

    fn chunk_len(&self) -> usize {
        self.horizon * self.action_dim
    }

    fn forward(&self, store: &ParamStore<T>, x_t: &[T], t: usize, cond: &[T]) -> Result<(Vec<T>, DenoiserCache<T>), NnError> {
        check_len("denoiser chunk", self.horizon * self.action_dim, x_t.len())?;
        check_len("denoiser condition", self.cond_dim, cond.len())?;
        let mut input = Vec::with_capacity(self.mlp.d_in());
        input.extend_from_slice(x_t);
        input.extend_from_slice(cond);
        input.extend(time_embedding::<T>(t, self.temb_dim));
        let (out, mlp) = self.mlp.forward_cached(store, &input)?;
        Ok((out, DenoiserCache { mlp, x_len: x_t.len(), cond_dim: self.cond_dim }))
    }

    fn backward(&self, store: &mut ParamStore<T>, cache: &DenoiserCache<T>, g_eps: &[T]) -> Vec<T> {
        let g_in = self.mlp.backward(store, &cache.mlp, g_eps);
        g_in[cache.x_len..cache.x_len + cache.cond_dim].to_vec()
    }
}

#[derive(Clone, Debug)]
pub struct DdpmLoss<T> {
    pub loss: T,
    /// Diffusion level drawn for this sample.
    pub t: usize,
    /// Gradient of the (scaled) loss with respect to the condition.
    pub g_cond: Vec<T>,
}

/// Mean squared ε-prediction error for one chunk. The level and the noise
/// come from `seed`. With `grad_scale = Some(s)`, gradients of `s · loss`
/// are accumulated into `store`.
pub fn ddpm_loss<T: Scalar, M: EpsModel<T>>(
    model: &M,
    store: &mut ParamStore<T>,
    schedule: &DiffusionSchedule,
    clean: &Tensor<T>,
    cond: &[T],
    seed: u64,
    grad_scale: Option<T>,
) -> Result<DdpmLoss<T>, NnError> {
    check_len("ddpm_loss chunk", model.chunk_len(), clean.len())?;
    let mut rng = SplitMix64::new(seed);
    let t = rng.below(schedule.steps as u64) as usize;
    let eps: Vec<T> = (0..clean.len()).map(|_| T::of(rng.normal())).collect();
    let x_t = schedule.noise(&clean.data, t, &eps);
    let (pred, cache) = model.forward(store, &x_t, t, cond)?;
    let n = T::of(pred.len() as f64);
    let loss = pred.iter().zip(&eps).fold(T::zero(), |s, (&p, &e)| s + (p - e) * (p - e)) / n;
    let g_cond = match grad_scale {
        Some(s) => {
            let g: Vec<T> = pred.iter().zip(&eps).map(|(&p, &e)| T::of(2.0) * (p - e) / n * s).collect();
            model.backward(store, &cache, &g)
        }
        None => Vec::new(),
    };
    Ok(DdpmLoss { loss, t, g_cond })
}

/// Ancestral sampling from pure noise, deterministic in `seed`.
pub fn ddpm_sample<T: Scalar, M: EpsModel<T>>(
    model: &M,
    store: &ParamStore<T>,
    schedule: &DiffusionSchedule,
    shape: (usize, usize),
    cond: &[T],
    seed: u64,
) -> Result<Tensor<T>, NnError> {
    sample_chain(model, store, schedule, shape, cond, Some(&mut SplitMix64::new(seed)))
}

/// Noise-free reverse chain from the prior mode `x_T = 0`: every step takes
/// the posterior mean. Deterministic given `cond`.
pub fn ddpm_sample_greedy<T: Scalar, M: EpsModel<T>>(
    model: &M,
    store: &ParamStore<T>,
    schedule: &DiffusionSchedule,
    shape: (usize, usize),
    cond: &[T],
) -> Result<Tensor<T>, NnError> {
    sample_chain(model, store, schedule, shape, cond, None)
}

fn sample_chain<T: Scalar, M: EpsModel<T>>(
    model: &M,
    store: &ParamStore<T>,
    schedule: &DiffusionSchedule,
    shape: (usize, usize),
    cond: &[T],
    mut rng: Option<&mut SplitMix64>,
) -> Result<Tensor<T>, NnError> {
    let n = shape.0 * shape.1;
    check_len("ddpm_sample chunk", model.chunk_len(), n)?;
    let draw = |rng: &mut Option<&mut SplitMix64>| -> Vec<T> {
        match rng {
            Some(r) => (0..n).map(|_| T::of(r.normal())).collect(),
            None => vec![T::zero(); n],
        }
    };
    let mut x = draw(&mut rng);
    for t in (0..schedule.steps).rev() {
        let (eps_hat, _) = model.forward(store, &x, t, cond)?;
        let z = if t > 0 { draw(&mut rng) } else { vec![T::zero(); n] };
        x = schedule.reverse_step(&x, t, &eps_hat, &z);
    }
    Tensor::from_vec(&[shape.0, shape.1], x)
}
