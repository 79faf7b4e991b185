//! Affine layers, GELU stacks and mean pooling.

use super::{check_len, NnError, ParamId, ParamStore, Scalar, Tensor};
use crate::rng::SplitMix64;

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

/// GELU, tanh approximation.
#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let u = T::of(SQRT_2_OVER_PI) * (x + T::of(GELU_C) * x * x * x);
    half * x * (T::one() + u.tanh())
}

#[inline]
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let u = T::of(SQRT_2_OVER_PI) * (x + T::of(GELU_C) * x * x * x);
    let th = u.tanh();
    let du = T::of(SQRT_2_OVER_PI) * (T::one() + T::of(3.0 * GELU_C) * x * x);
    half * (T::one() + th) + half * x * (T::one() - th * th) * du
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] = acc[0] + a[i] * b[i];
        acc[1] = acc[1] + a[i + 1] * b[i + 1];
        acc[2] = acc[2] + a[i + 2] * b[i + 2];
        acc[3] = acc[3] + a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s = s + a[i] * b[i];
    }
    s
}

#[inline]
pub(crate) fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

/// `y = W x + b` with `W` stored as `[out, in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    /// Normal init scaled by `1/sqrt(d_in)`, zero bias.
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, d_in: usize, d_out: usize, rng: &mut SplitMix64) -> Result<Self, NnError> {
        let w = store.add_normal(&format!("{name}.w"), &[d_out, d_in], 1.0 / (d_in as f64).sqrt(), rng)?;
        let b = store.add_zeros(&format!("{name}.b"), &[d_out])?;
        Ok(Self { w, b, d_in, d_out })
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, x: &[T]) -> Result<Vec<T>, NnError> {
        check_len("linear", self.d_in, x.len())?;
        let w = store.value(self.w);
        let b = store.value(self.b);
        Ok((0..self.d_out).map(|o| b[o] + dot(&w[o * self.d_in..(o + 1) * self.d_in], x)).collect())
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward<T: Scalar>(&self, store: &mut ParamStore<T>, x: &[T], gy: &[T]) -> Vec<T> {
        let mut gx = vec![T::zero(); self.d_in];
        {
            let (w, gw) = store.value_and_grad(self.w);
            for o in 0..self.d_out {
                let g = gy[o];
                if g == T::zero() {
                    continue;
                }
                let row = o * self.d_in..(o + 1) * self.d_in;
                axpy(g, &w[row.clone()], &mut gx);
                axpy(g, x, &mut gw[row]);
            }
        }
        for (gb, &g) in store.grad_mut(self.b).iter_mut().zip(gy) {
            *gb = *gb + g;
        }
        gx
    }
}

/// Affine layers with GELU between them (none after the last).
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

#[derive(Clone, Debug, Default)]
pub struct MlpCache<T> {
    /// Input to each layer.
    inputs: Vec<Vec<T>>,
    /// Pre-activations of every hidden layer.
    pre: Vec<Vec<T>>,
}

impl Mlp {
    /// `dims = [d_in, hidden.., d_out]`.
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dims: &[usize], rng: &mut SplitMix64) -> Result<Self, NnError> {
        assert!(dims.len() >= 2, "an mlp needs input and output widths");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| Linear::new(store, &format!("{name}.{i}"), d[0], d[1], rng))
            .collect::<Result<_, _>>()?;
        Ok(Self { layers })
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].d_in
    }

    pub fn d_out(&self) -> usize {
        self.layers[self.layers.len() - 1].d_out
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, x: &[T]) -> Result<Vec<T>, NnError> {
        Ok(self.forward_cached(store, x)?.0)
    }

    pub fn forward_cached<T: Scalar>(&self, store: &ParamStore<T>, x: &[T]) -> Result<(Vec<T>, MlpCache<T>), NnError> {
        let mut cache = MlpCache { inputs: Vec::with_capacity(self.layers.len()), pre: Vec::new() };
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(store, &h)?;
            cache.inputs.push(h);
            if i == last {
                return Ok((z, cache));
            }
            h = z.iter().map(|&v| gelu(v)).collect();
            cache.pre.push(z);
        }
        unreachable!()
    }

    pub fn backward<T: Scalar>(&self, store: &mut ParamStore<T>, cache: &MlpCache<T>, gy: &[T]) -> Vec<T> {
        let mut g = gy.to_vec();
        for i in (0..self.layers.len()).rev() {
            g = self.layers[i].backward(store, &cache.inputs[i], &g);
            if i > 0 {
                for (gi, &z) in g.iter_mut().zip(&cache.pre[i - 1]) {
                    *gi = *gi * gelu_grad(z);
                }
            }
        }
        g
    }
}

/// Arithmetic mean over the rows of a rank-2 tensor.
pub fn mean_pool<T: Scalar>(tokens: &Tensor<T>) -> Result<Vec<T>, NnError> {
    if tokens.shape.len() != 2 {
        return Err(NnError::Shape { op: "mean_pool rank", expected: 2, got: tokens.shape.len() });
    }
    let (n, d) = (tokens.shape[0], tokens.shape[1]);
    if n == 0 {
        return Err(NnError::Empty("mean_pool"));
    }
    let mut out = vec![T::zero(); d];
    for r in 0..n {
        axpy(T::one(), tokens.row(r), &mut out);
    }
    let inv = T::one() / T::of(n as f64);
    out.iter_mut().for_each(|v| *v = *v * inv);
    Ok(out)
}

/// Gradient of [`mean_pool`] with respect to its `rows x gy.len()` input.
pub fn mean_pool_backward<T: Scalar>(rows: usize, gy: &[T]) -> Tensor<T> {
    let inv = T::one() / T::of(rows as f64);
    let row: Vec<T> = gy.iter().map(|&g| g * inv).collect();
    Tensor { shape: vec![rows, gy.len()], data: row.iter().copied().cycle().take(rows * gy.len()).collect() }
}
