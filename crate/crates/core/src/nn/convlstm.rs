//! Convolutional LSTM cell without peephole terms:
//!
//! ```text
//! i = σ(W_i ∗ [x, h] + b_i)     f = σ(W_f ∗ [x, h] + b_f)
//! o = σ(W_o ∗ [x, h] + b_o)     g = tanh(W_g ∗ [x, h] + b_g)
//! c' = f ⊙ c + i ⊙ g            h' = o ⊙ tanh(c')
//! ```

use super::{Conv2d, ParamRole, ParameterStore, Session};
use crate::error::{Error, Result};
use crate::tensor::{Conv2dOptions, Scalar, Shape, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub struct ConvLstmState {
    pub h: Var,
    pub c: Var,
}

impl ConvLstmState {
    pub fn zeros<T: Scalar>(s: &mut Session<'_, T>, shape: Shape) -> Self {
        let h = s.input(Tensor::zeros(shape));
        let c = s.input(Tensor::zeros(shape));
        Self { h, c }
    }
}

#[derive(Clone, Debug)]
pub struct ConvLstmCell {
    pub input_channels: usize,
    pub hidden: usize,
    pub input_gate: Conv2d,
    pub forget_gate: Conv2d,
    pub output_gate: Conv2d,
    pub candidate: Conv2d,
}

impl ConvLstmCell {
    pub fn new<T: Scalar>(store: &mut ParameterStore<T>, name: &str, input_channels: usize, hidden: usize) -> Result<Self> {
        let opts = Conv2dOptions::new(1, 1, 1);
        let c_in = input_channels + hidden;
        let mut gate = |g: &str, role| Conv2d::new(store, &format!("{name}.gate_{g}"), c_in, hidden, 3, opts, true, role);
        Ok(Self {
            input_channels,
            hidden,
            input_gate: gate("i", ParamRole::Bias)?,
            forget_gate: gate("f", ParamRole::ForgetBias)?,
            output_gate: gate("o", ParamRole::Bias)?,
            candidate: gate("g", ParamRole::Bias)?,
        })
    }

    /// One recurrence step; returns `h'` and the new state.
    pub fn step<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var, state: ConvLstmState) -> Result<(Var, ConvLstmState)> {
        let xs = s.shape(x);
        let hs = s.shape(state.h);
        let cs = s.shape(state.c);
        if (xs.n, xs.h, xs.w) != (hs.n, hs.h, hs.w) {
            return Err(Error::ShapeMismatch {
                op: "convlstm_step",
                left: xs,
                right: hs,
            });
        }
        if hs != cs || hs.c != self.hidden {
            return Err(Error::ShapeMismatch {
                op: "convlstm_step state",
                left: hs,
                right: cs,
            });
        }
        if xs.c != self.input_channels {
            return Err(Error::ChannelMismatch {
                op: "convlstm_step",
                expected: self.input_channels,
                actual: xs.c,
            });
        }
        let xh = s.tape.concat_channels(&[x, state.h])?;
        let i = self.input_gate.forward(s, xh)?;
        let i = s.tape.sigmoid(i);
        let f = self.forget_gate.forward(s, xh)?;
        let f = s.tape.sigmoid(f);
        let o = self.output_gate.forward(s, xh)?;
        let o = s.tape.sigmoid(o);
        let g = self.candidate.forward(s, xh)?;
        let g = s.tape.tanh(g);

        let keep = s.tape.mul(f, state.c)?;
        let write = s.tape.mul(i, g)?;
        let c_next = s.tape.add(keep, write)?;
        let squashed = s.tape.tanh(c_next);
        let h_next = s.tape.mul(o, squashed)?;
        Ok((h_next, ConvLstmState { h: h_next, c: c_next }))
    }
}
