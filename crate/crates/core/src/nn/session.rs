use super::{ParamId, ParameterStore};
use crate::error::Result;
use crate::tensor::{Scalar, Shape, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One forward (and optional backward) pass of a model over its parameter store.
///
/// Parameters are copied onto the tape the first time a layer asks for them.
/// After `backward`, their gradients are added into the store's grad buffers.
/// Train-mode batch norm writes running statistics straight into the store.
pub struct Session<'s, T: Scalar = f32> {
    pub tape: Tape<T>,
    store: &'s mut ParameterStore<T>,
    bound: Vec<Option<Var>>,
    mode: Mode,
    trace: Vec<(String, Shape)>,
}

impl<'s, T: Scalar> Session<'s, T> {
    pub fn new(store: &'s mut ParameterStore<T>, mode: Mode) -> Self {
        Self::with_tape(store, mode, Tape::new())
    }

    pub fn with_tape(store: &'s mut ParameterStore<T>, mode: Mode, tape: Tape<T>) -> Self {
        let n = store.len();
        Self {
            tape,
            store,
            bound: vec![None; n],
            mode,
            trace: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &ParameterStore<T> {
        self.store
    }

    pub(crate) fn store_mut(&mut self) -> &mut ParameterStore<T> {
        self.store
    }

    /// Tape handle of parameter `id`.
    pub fn param(&mut self, id: ParamId) -> Var {
        if id.index() >= self.bound.len() {
            self.bound.resize(id.index() + 1, None);
        }
        if let Some(v) = self.bound[id.index()] {
            return v;
        }
        let p = self.store.get(id);
        let v = if p.role.trainable() {
            self.tape.param(p.tensor.clone())
        } else {
            self.tape.constant(p.tensor.clone())
        };
        self.bound[id.index()] = Some(v);
        v
    }

    /// Uses `v` for parameter `id` instead of copying the stored tensor.
    pub fn bind(&mut self, id: ParamId, v: Var) {
        if id.index() >= self.bound.len() {
            self.bound.resize(id.index() + 1, None);
        }
        self.bound[id.index()] = Some(v);
    }

    pub fn into_tape(self) -> Tape<T> {
        self.tape
    }

    pub fn input(&mut self, tensor: Tensor<T>) -> Var {
        self.tape.constant(tensor)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.tape.value(v)
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.tape.shape(v)
    }

    /// Records a named intermediate shape for structural inspection.
    pub fn trace(&mut self, name: impl Into<String>, v: Var) {
        let s = self.shape(v);
        self.trace.push((name.into(), s));
    }

    pub fn traces(&self) -> &[(String, Shape)] {
        &self.trace
    }

    pub fn traced(&self, name: &str) -> Option<Shape> {
        self.trace.iter().find(|(n, _)| n == name).map(|(_, s)| *s)
    }

    /// Back-propagates `loss` and adds the resulting gradients into the store.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.tape.backward(loss)?;
        for (i, v) in self.bound.iter().enumerate() {
            let Some(v) = v else { continue };
            if let Some(g) = self.tape.grad(*v) {
                self.store.accumulate_grad(ParamId(i), g);
            }
        }
        self.tape.zero_grads();
        Ok(())
    }
}
