//! Small differentiable building blocks with hand-written backward passes.
//!
//! Everything is generic over the float type so the same code runs in `f32`
//! for models and in `f64` for finite-difference gradient checks. Layers do
//! not own their weights: they hold [`ParamId`]s into a [`ParamStore`], which
//! keeps values, gradient accumulators and optimizer moments side by side.

mod attention;
mod diffusion;
mod io;
mod layers;
mod optim;

use std::collections::HashMap;
use std::fmt::Debug;

use num_traits::Float;
use thiserror::Error;

use crate::rng::SplitMix64;

pub use attention::{AttentionCache, CrossAttention};
pub use diffusion::{
    ddpm_loss, ddpm_sample, ddpm_sample_greedy, time_embedding, DdpmLoss, Denoiser, DenoiserCache, DiffusionSchedule, EpsModel,
    BASE_SCHEDULE_STEPS, BETA_END, BETA_START,
};
pub use io::{copy_matching, load_params, load_params_into, params_from_bytes, params_to_bytes, save_params, WEIGHT_MAGIC, WEIGHT_VERSION};
pub use layers::{gelu, gelu_grad, mean_pool, mean_pool_backward, Linear, Mlp, MlpCache};
pub use optim::Adam;

/// Floating-point element type.
pub trait Scalar: Float + Debug + Default + Send + Sync + 'static {
    fn of(x: f64) -> Self {
        Self::from(x).expect("representable constant")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape { op: &'static str, expected: usize, got: usize },
    #[error("{0} needs at least one row")]
    Empty(&'static str),
    #[error("duplicate parameter name `{0}`")]
    DuplicateName(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a weight file")]
    BadMagic,
    #[error("weight file version {found} unsupported (expected {expected})")]
    Version { found: u16, expected: u16 },
    #[error("weight file checksum mismatch")]
    Checksum,
    #[error("weight file truncated or malformed: {0}")]
    Malformed(String),
    #[error("parameter `{name}`: {problem}")]
    ShapeTable { name: String, problem: String },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

pub(crate) fn check_len(op: &'static str, expected: usize, got: usize) -> Result<(), NnError> {
    if expected != got {
        return Err(NnError::Shape { op, expected, got });
    }
    Ok(())
}

/// Dense row-major tensor of rank at most 3.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        debug_assert!(shape.len() <= 3);
        Self { shape: shape.to_vec(), data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self, NnError> {
        check_len("tensor", shape.iter().product(), data.len())?;
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[T] {
        let w = self.shape[1];
        &self.data[i * w..(i + 1) * w]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Vec<T>,
    pub(crate) m: Vec<T>,
    pub(crate) v: Vec<T>,
}

/// Named parameters with paired gradient and moment buffers.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new(), index: HashMap::new() }
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId, NnError> {
        if self.index.contains_key(name) {
            return Err(NnError::DuplicateName(name.to_string()));
        }
        let n = value.len();
        self.params.push(Param {
            name: name.to_string(),
            value,
            grad: vec![T::zero(); n],
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
        });
        self.index.insert(name.to_string(), self.params.len() - 1);
        Ok(ParamId(self.params.len() - 1))
    }

    /// Gaussian init with standard deviation `std`.
    pub fn add_normal(&mut self, name: &str, shape: &[usize], std: f64, rng: &mut SplitMix64) -> Result<ParamId, NnError> {
        let mut t = Tensor::zeros(shape);
        for x in &mut t.data {
            *x = T::of(rng.normal() * std);
        }
        self.add(name, t)
    }

    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId, NnError> {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn value(&self, id: ParamId) -> &[T] {
        &self.params[id.0].value.data
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.params[id.0].value.data
    }

    pub fn grad(&self, id: ParamId) -> &[T] {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.params[id.0].grad
    }

    /// Value and gradient of one parameter, borrowed together.
    pub fn value_and_grad(&mut self, id: ParamId) -> (&[T], &mut [T]) {
        let p = &mut self.params[id.0];
        (&p.value.data, &mut p.grad)
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    pub fn scale_grads(&mut self, s: T) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = *g * s);
        }
    }

    pub fn grads_finite(&self) -> bool {
        self.params.iter().all(|p| p.grad.iter().all(|g| g.is_finite()))
    }

    pub fn values_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.all_finite())
    }

    /// Flat copy of every value, in registration order.
    pub fn flat_values(&self) -> Vec<T> {
        self.params.iter().flat_map(|p| p.value.data.iter().copied()).collect()
    }

    pub fn flat_grads(&self) -> Vec<T> {
        self.params.iter().flat_map(|p| p.grad.iter().copied()).collect()
    }

    /// Mutable access to the `k`-th scalar across all parameters.
    pub fn scalar_mut(&mut self, mut k: usize) -> &mut T {
        for p in &mut self.params {
            if k < p.value.len() {
                return &mut p.value.data[k];
            }
            k -= p.value.len();
        }
        panic!("scalar index out of range")
    }
}
