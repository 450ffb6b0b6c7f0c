use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Index of a parameter inside its [`ParameterStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// What a stored tensor is for; decides its default value and initialization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    Kernel,
    Bias,
    /// ConvLSTM forget-gate bias, starts at 1.
    ForgetBias,
    Gamma,
    Beta,
    RunningMean,
    RunningVar,
}

impl ParamRole {
    pub fn trainable(self) -> bool {
        !matches!(self, ParamRole::RunningMean | ParamRole::RunningVar)
    }

    fn default_value(self) -> f64 {
        match self {
            ParamRole::ForgetBias | ParamRole::Gamma | ParamRole::RunningVar => 1.0,
            _ => 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Param<T: Scalar> {
    pub name: String,
    pub role: ParamRole,
    pub tensor: Tensor<T>,
    /// Set once a backward pass has written into the grad buffer.
    has_grad: bool,
}

impl<T: Scalar> Param<T> {
    pub fn has_grad(&self) -> bool {
        self.has_grad
    }

    /// `c_in · k_h · k_w` for kernels.
    pub fn fan_in(&self) -> usize {
        let s = self.tensor.shape();
        s.c * s.h * s.w
    }
}

/// Named, ordered trainable tensors and batch-norm running statistics.
#[derive(Clone, Debug, Default)]
pub struct ParameterStore<T: Scalar = f32> {
    params: Vec<Param<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Scalar> ParameterStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn register(&mut self, name: impl Into<String>, shape: Shape, role: ParamRole) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::DuplicateParameter(name));
        }
        let mut tensor = Tensor::new(shape, vec![T::from_f64(role.default_value()); shape.numel()])?;
        if role.trainable() {
            tensor = tensor.with_grad();
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param {
            name,
            role,
            tensor,
            has_grad: false,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Param<T>)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn trainable(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.iter().filter(|(_, p)| p.role.trainable())
    }

    /// Total number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.trainable().map(|(_, p)| p.tensor.numel()).sum()
    }

    pub fn accumulate_grad(&mut self, id: ParamId, grad: &[T]) {
        let p = &mut self.params[id.0];
        if let Some(buf) = p.tensor.grad_mut() {
            buf.iter_mut().zip(grad).for_each(|(b, &g)| *b = *b + g);
            p.has_grad = true;
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.tensor.zero_grad();
            p.has_grad = false;
        }
    }

    /// Replaces the values of `id`, keeping its grad buffer.
    pub fn set_values(&mut self, id: ParamId, values: &Tensor<T>) -> Result<()> {
        let p = &mut self.params[id.0];
        if values.shape() != p.tensor.shape() {
            return Err(Error::ShapeMismatch {
                op: "set_values",
                left: p.tensor.shape(),
                right: values.shape(),
            });
        }
        p.tensor.data_mut().copy_from_slice(values.data());
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParameterStore<U> {
        ParameterStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    role: p.role,
                    tensor: p.tensor.cast(),
                    has_grad: p.has_grad,
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_by_role() {
        let mut s = ParameterStore::<f32>::new();
        let k = s.register("a.kernel", Shape::new(2, 1, 3, 3), ParamRole::Kernel).unwrap();
        let f = s.register("a.forget", Shape::new(2, 1, 1, 1), ParamRole::ForgetBias).unwrap();
        let rv = s.register("a.rv", Shape::new(2, 1, 1, 1), ParamRole::RunningVar).unwrap();
        assert!(s.get(k).tensor.data().iter().all(|&v| v == 0.0));
        assert!(s.get(f).tensor.data().iter().all(|&v| v == 1.0));
        assert!(!s.get(rv).tensor.requires_grad());
        assert!(s.get(k).tensor.requires_grad());
        assert_eq!(s.trainable_count(), 18 + 2);
        assert_eq!(s.get(k).fan_in(), 9);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParameterStore::<f32>::new();
        s.register("x", Shape::scalar(), ParamRole::Bias).unwrap();
        assert!(matches!(
            s.register("x", Shape::scalar(), ParamRole::Bias),
            Err(Error::DuplicateParameter(_))
        ));
    }

    #[test]
    fn gradient_accumulates_and_clears() {
        let mut s = ParameterStore::<f64>::new();
        let id = s.register("b", Shape::new(2, 1, 1, 1), ParamRole::Bias).unwrap();
        assert!(!s.get(id).has_grad());
        s.accumulate_grad(id, &[1.0, 2.0]);
        s.accumulate_grad(id, &[1.0, 2.0]);
        assert_eq!(s.get(id).tensor.grad().unwrap(), &[2.0, 4.0]);
        s.zero_grads();
        assert!(!s.get(id).has_grad());
        assert_eq!(s.get(id).tensor.grad().unwrap(), &[0.0, 0.0]);
    }
}
