use super::{ParamStore, Scalar};

/// Adam with bias correction. Gradients are zeroed after every step.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
}

impl Default for Adam {
    fn default() -> Self {
        Self::new(1e-3)
    }
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0 }
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { lr, beta1, beta2, eps, t: 0 }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    pub fn step<T: Scalar>(&mut self, store: &mut ParamStore<T>) {
        let lr = self.lr;
        self.step_with(store, |_| lr);
    }

    /// Step with a per-parameter learning rate chosen by name.
    pub fn step_with<T: Scalar>(&mut self, store: &mut ParamStore<T>, lr_of: impl Fn(&str) -> f64) {
        self.t += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - self.beta1.powi(self.t));
        let c2 = T::of(1.0 - self.beta2.powi(self.t));
        let eps = T::of(self.eps);
        for p in &mut store.params {
            let lr = T::of(lr_of(&p.name));
            for i in 0..p.grad.len() {
                let g = p.grad[i];
                p.m[i] = b1 * p.m[i] + (T::one() - b1) * g;
                p.v[i] = b2 * p.v[i] + (T::one() - b2) * g * g;
                let m_hat = p.m[i] / c1;
                let v_hat = p.v[i] / c2;
                p.value.data[i] = p.value.data[i] - lr * m_hat / (v_hat.sqrt() + eps);
                p.grad[i] = T::zero();
            }
        }
    }
}
