use super::{Mode, ParamId, ParamRole, ParameterStore, Session};
use crate::error::Result;
use crate::tensor::{Conv2dOptions, Scalar, Shape, Var};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPSILON: f64 = 1e-5;

/// Convolution weights plus geometry.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub kernel: ParamId,
    pub bias: Option<ParamId>,
    pub opts: Conv2dOptions,
    pub c_in: usize,
    pub c_out: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParameterStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        opts: Conv2dOptions,
        bias: bool,
        bias_role: ParamRole,
    ) -> Result<Self> {
        let k = store.register(format!("{name}.kernel"), Shape::new(c_out, c_in, kernel, kernel), ParamRole::Kernel)?;
        let b = if bias {
            Some(store.register(format!("{name}.bias"), Shape::new(c_out, 1, 1, 1), bias_role)?)
        } else {
            None
        };
        Ok(Self {
            kernel: k,
            bias: b,
            opts,
            c_in,
            c_out,
        })
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let k = s.param(self.kernel);
        let b = self.bias.map(|b| s.param(b));
        s.tape.conv2d(x, k, b, self.opts)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new<T: Scalar>(store: &mut ParameterStore<T>, name: &str, channels: usize) -> Result<Self> {
        let shape = Shape::new(channels, 1, 1, 1);
        Ok(Self {
            gamma: store.register(format!("{name}.gamma"), shape, ParamRole::Gamma)?,
            beta: store.register(format!("{name}.beta"), shape, ParamRole::Beta)?,
            running_mean: store.register(format!("{name}.running_mean"), shape, ParamRole::RunningMean)?,
            running_var: store.register(format!("{name}.running_var"), shape, ParamRole::RunningVar)?,
        })
    }

    /// Batch statistics in train mode (updating the running estimates), running
    /// statistics in eval mode.
    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let gamma = s.param(self.gamma);
        let beta = s.param(self.beta);
        match s.mode() {
            Mode::Train => {
                let (y, stats) = s.tape.batch_norm_train(x, gamma, beta, BN_EPSILON)?;
                let m = T::from_f64(BN_MOMENTUM);
                let keep = T::one() - m;
                let unbias = if stats.count > 1 {
                    T::from_usize(stats.count) / T::from_usize(stats.count - 1)
                } else {
                    T::one()
                };
                let store = s.store_mut();
                let rm = store.get_mut(self.running_mean).tensor.data_mut();
                for (r, &v) in rm.iter_mut().zip(&stats.mean) {
                    *r = keep * *r + m * v;
                }
                let rv = store.get_mut(self.running_var).tensor.data_mut();
                for (r, &v) in rv.iter_mut().zip(&stats.var) {
                    *r = keep * *r + m * v * unbias;
                }
                Ok(y)
            }
            Mode::Eval => {
                let store = s.store();
                let rm = store.get(self.running_mean).tensor.data().to_vec();
                let rv = store.get(self.running_var).tensor.data().to_vec();
                s.tape.batch_norm_eval(x, gamma, beta, &rm, &rv, BN_EPSILON)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    None,
}

/// Convolution → batch norm → activation.
///
/// Convolutions feeding a batch norm carry no bias (the norm's shift replaces
/// it). The normalization-free variant exists for branches that see a single
/// value per channel, where batch statistics would be degenerate.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub conv: Conv2d,
    pub bn: Option<BatchNorm>,
    pub activation: Activation,
}

impl ConvBlock {
    pub fn new<T: Scalar>(
        store: &mut ParameterStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        opts: Conv2dOptions,
        activation: Activation,
    ) -> Result<Self> {
        let conv = Conv2d::new(store, &format!("{name}.conv"), c_in, c_out, kernel, opts, false, ParamRole::Bias)?;
        let bn = BatchNorm::new(store, &format!("{name}.bn"), c_out)?;
        Ok(Self {
            conv,
            bn: Some(bn),
            activation,
        })
    }

    /// 3×3, stride 1, padding 1, ReLU.
    pub fn same3x3<T: Scalar>(store: &mut ParameterStore<T>, name: &str, c_in: usize, c_out: usize) -> Result<Self> {
        Self::new(store, name, c_in, c_out, 3, Conv2dOptions::new(1, 1, 1), Activation::Relu)
    }

    /// 1×1 with the given stride, ReLU.
    pub fn pointwise<T: Scalar>(
        store: &mut ParameterStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        stride: usize,
    ) -> Result<Self> {
        Self::new(store, name, c_in, c_out, 1, Conv2dOptions::new(stride, 1, 0), Activation::Relu)
    }

    /// Biased convolution → activation, no normalization.
    pub fn without_norm<T: Scalar>(
        store: &mut ParameterStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        opts: Conv2dOptions,
        activation: Activation,
    ) -> Result<Self> {
        let conv = Conv2d::new(store, &format!("{name}.conv"), c_in, c_out, kernel, opts, true, ParamRole::Bias)?;
        Ok(Self {
            conv,
            bn: None,
            activation,
        })
    }

    pub fn c_out(&self) -> usize {
        self.conv.c_out
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let mut y = self.conv.forward(s, x)?;
        if let Some(bn) = &self.bn {
            y = bn.forward(s, y)?;
        }
        Ok(match self.activation {
            Activation::Relu => s.tape.relu(y),
            Activation::None => y,
        })
    }
}
