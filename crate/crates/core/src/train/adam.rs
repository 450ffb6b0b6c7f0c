use crate::error::{Error, Result};
use crate::nn::ParameterStore;
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moments for every parameter of a store (empty for
/// non-trainable entries), plus the step counter.
#[derive(Clone, Debug)]
pub struct OptimState<T: Scalar = f32> {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> OptimState<T> {
    pub fn new(store: &ParameterStore<T>, config: AdamConfig) -> Self {
        let zeros = |_| -> Vec<Vec<T>> {
            store
                .iter()
                .map(|(_, p)| if p.role.trainable() { vec![T::zero(); p.tensor.numel()] } else { Vec::new() })
                .collect()
        };
        Self {
            config,
            t: 0,
            m: zeros(0),
            v: zeros(1),
        }
    }
}

/// One bias-corrected Adam update over every trainable parameter, then clears
/// the gradients.
pub fn adam_step<T: Scalar>(store: &mut ParameterStore<T>, opt: &mut OptimState<T>) -> Result<()> {
    if opt.m.len() != store.len() {
        return Err(Error::Invalid(format!(
            "optimizer tracks {} tensors, store has {}",
            opt.m.len(),
            store.len()
        )));
    }
    if let Some((_, p)) = store.trainable().find(|(_, p)| !p.has_grad()) {
        return Err(Error::MissingGradient(p.name.clone()));
    }
    opt.t += 1;
    let c = opt.config;
    let t = opt.t as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
    let (one_b1, one_b2) = (T::from_f64(1.0 - c.beta1), T::from_f64(1.0 - c.beta2));
    let (bc1, bc2) = (T::from_f64(bc1), T::from_f64(bc2));
    let (lr, eps) = (T::from_f64(c.lr), T::from_f64(c.epsilon));
    for (id, p) in store.iter_mut() {
        if !p.role.trainable() {
            continue;
        }
        let i = id.index();
        let (m, v) = (&mut opt.m[i], &mut opt.v[i]);
        let grad = p.tensor.grad().expect("trainable tensors carry a grad buffer").to_vec();
        for (((theta, g), m), v) in p.tensor.data_mut().iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + one_b1 * g;
            *v = b2 * *v + one_b2 * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *theta = *theta - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    store.zero_grads();
    Ok(())
}
