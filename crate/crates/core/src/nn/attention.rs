//! Single-head cross-attention with a residual connection to the query.

use super::layers::{axpy, dot, Linear};
use super::{check_len, NnError, ParamStore, Scalar};
use crate::rng::SplitMix64;

/// `out = z + W_o · Σ_j softmax_j(q·k_j / √d) v_j` with `q = W_q z`,
/// `k_j = W_k m_j`, `v_j = W_v m_j`. An empty memory contributes nothing.
#[derive(Clone, Debug)]
pub struct CrossAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub dim: usize,
}

#[derive(Clone, Debug, Default)]
pub struct AttentionCache<T> {
    q: Vec<T>,
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
    /// Softmax weights over memory entries.
    pub weights: Vec<T>,
    ctx: Vec<T>,
}

impl CrossAttention {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize, rng: &mut SplitMix64) -> Result<Self, NnError> {
        Ok(Self {
            wq: Linear::new(store, &format!("{name}.q"), dim, dim, rng)?,
            wk: Linear::new(store, &format!("{name}.k"), dim, dim, rng)?,
            wv: Linear::new(store, &format!("{name}.v"), dim, dim, rng)?,
            wo: Linear::new(store, &format!("{name}.o"), dim, dim, rng)?,
            dim,
        })
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, z: &[T], memory: &[Vec<T>]) -> Result<Vec<T>, NnError> {
        Ok(self.forward_cached(store, z, memory)?.0)
    }

    pub fn forward_cached<T: Scalar>(&self, store: &ParamStore<T>, z: &[T], memory: &[Vec<T>]) -> Result<(Vec<T>, AttentionCache<T>), NnError> {
        check_len("cross_attend query", self.dim, z.len())?;
        if memory.is_empty() {
            return Ok((z.to_vec(), AttentionCache::default()));
        }
        let q = self.wq.forward(store, z)?;
        let keys = memory.iter().map(|m| self.wk.forward(store, m)).collect::<Result<Vec<_>, _>>()?;
        let values = memory.iter().map(|m| self.wv.forward(store, m)).collect::<Result<Vec<_>, _>>()?;
        let scale = T::one() / T::of(self.dim as f64).sqrt();
        let scores: Vec<T> = keys.iter().map(|k| dot(&q, k) * scale).collect();
        let weights = softmax(&scores);
        let mut ctx = vec![T::zero(); self.dim];
        for (a, v) in weights.iter().zip(&values) {
            axpy(*a, v, &mut ctx);
        }
        let mut out = self.wo.forward(store, &ctx)?;
        axpy(T::one(), z, &mut out);
        Ok((out, AttentionCache { q, keys, values, weights, ctx }))
    }

    /// Returns gradients for the query and for every memory entry.
    pub fn backward<T: Scalar>(
        &self,
        store: &mut ParamStore<T>,
        cache: &AttentionCache<T>,
        z: &[T],
        memory: &[Vec<T>],
        gy: &[T],
    ) -> (Vec<T>, Vec<Vec<T>>) {
        let mut gz = gy.to_vec();
        if memory.is_empty() {
            return (gz, Vec::new());
        }
        let scale = T::one() / T::of(self.dim as f64).sqrt();
        let g_ctx = self.wo.backward(store, &cache.ctx, gy);
        let g_a: Vec<T> = cache.values.iter().map(|v| dot(&g_ctx, v)).collect();
        let mean = cache.weights.iter().zip(&g_a).fold(T::zero(), |s, (&a, &g)| s + a * g);
        let g_s: Vec<T> = cache.weights.iter().zip(&g_a).map(|(&a, &g)| a * (g - mean)).collect();

        let mut g_q = vec![T::zero(); self.dim];
        for (gs, k) in g_s.iter().zip(&cache.keys) {
            axpy(*gs * scale, k, &mut g_q);
        }
        axpy(T::one(), &self.wq.backward(store, z, &g_q), &mut gz);

        let mut g_mem = Vec::with_capacity(memory.len());
        for (j, m) in memory.iter().enumerate() {
            let g_k: Vec<T> = cache.q.iter().map(|&q| q * g_s[j] * scale).collect();
            let g_v: Vec<T> = g_ctx.iter().map(|&g| g * cache.weights[j]).collect();
            let mut gm = self.wk.backward(store, m, &g_k);
            axpy(T::one(), &self.wv.backward(store, m, &g_v), &mut gm);
            g_mem.push(gm);
        }
        (gz, g_mem)
    }
}

/// Numerically stable softmax.
pub(crate) fn softmax<T: Scalar>(s: &[T]) -> Vec<T> {
    let max = s.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = s.iter().map(|&x| (x - max).exp()).collect();
    let sum = e.iter().copied().fold(T::zero(), |a, b| a + b);
    e.into_iter().map(|x| x / sum).collect()
}
