//! Reverse-mode tape.
//!
//! Every op appends a node holding its output value and the handles of its
//! inputs. `backward` walks the nodes in reverse recorded order exactly once,
//! pushing gradients into the inputs of each visited op. Leaf gradients live on
//! the tape and accumulate across `backward` calls until [`Tape::zero_grads`].

use std::fmt;

use super::conv::{self, ConvGeometry};
use super::{Conv2dOptions, Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Op identity, used for diagnostics and fault injection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Conv2d,
    BatchNorm,
    Relu,
    Sigmoid,
    Tanh,
    Concat,
    SliceChannels,
    Resize,
    GlobalAvgPool,
    Add,
    Mul,
    Sum,
    DiceLoss,
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            OpKind::Leaf => "leaf",
            OpKind::Conv2d => "conv2d",
            OpKind::BatchNorm => "batch_norm",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::Concat => "concat",
            OpKind::SliceChannels => "slice_channels",
            OpKind::Resize => "upsample",
            OpKind::GlobalAvgPool => "global_pool",
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::Sum => "sum",
            OpKind::DiceLoss => "dice_loss",
        };
        f.write_str(s)
    }
}

/// Per-channel batch statistics produced by a train-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchNormStats<T> {
    pub mean: Vec<T>,
    /// Population (biased) variance.
    pub var: Vec<T>,
    /// Elements reduced per channel (`n·h·w`).
    pub count: usize,
}

/// Source and destination indices plus weights of separable bilinear interpolation.
#[derive(Clone, Debug)]
struct AxisMap<T> {
    lo: Vec<usize>,
    hi: Vec<usize>,
    frac: Vec<T>,
}

impl<T: Scalar> AxisMap<T> {
    /// Half-pixel (align-corners = false) source coordinates, clamped at the border.
    fn new(in_len: usize, out_len: usize) -> Self {
        let scale = in_len as f64 / out_len as f64;
        let mut map = Self {
            lo: Vec::with_capacity(out_len),
            hi: Vec::with_capacity(out_len),
            frac: Vec::with_capacity(out_len),
        };
        for o in 0..out_len {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            map.lo.push(lo);
            map.hi.push(hi);
            map.frac.push(T::from_f64(src - lo as f64));
        }
        map
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        /// Normalized input `(x − μ)·inv_std`.
        xhat: Vec<T>,
        inv_std: Vec<T>,
        /// Statistics were batch statistics (train mode) rather than constants.
        batch_stats: bool,
    },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Concat(Vec<Var>),
    SliceChannels {
        input: Var,
        start: usize,
    },
    Resize {
        input: Var,
        rows: AxisMap<T>,
        cols: AxisMap<T>,
    },
    GlobalAvgPool(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Sum(Var),
    DiceLoss {
        pred: Var,
        target: Var,
        /// `2·Σpt + smooth`
        numer: T,
        /// `Σp + Σt + smooth`
        denom: T,
    },
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::BatchNorm { .. } => OpKind::BatchNorm,
            Op::Relu(_) => OpKind::Relu,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Concat(_) => OpKind::Concat,
            Op::SliceChannels { .. } => OpKind::SliceChannels,
            Op::Resize { .. } => OpKind::Resize,
            Op::GlobalAvgPool(_) => OpKind::GlobalAvgPool,
            Op::Add(..) => OpKind::Add,
            Op::Mul(..) => OpKind::Mul,
            Op::Sum(_) => OpKind::Sum,
            Op::DiceLoss { .. } => OpKind::DiceLoss,
        }
    }
}

#[derive(Debug)]
struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    /// Persistent gradients of leaves, indexed like `nodes`.
    leaf_grads: Vec<Option<Vec<T>>>,
    fault: Option<OpKind>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            leaf_grads: Vec::new(),
            fault: None,
        }
    }

    /// Corrupts the backward rule of `kind` by scaling its upstream gradient by 1.01.
    /// Exists only as a negative control for gradient checking.
    pub fn inject_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Ops recorded so far, in order.
    pub fn op_kinds(&self) -> impl Iterator<Item = OpKind> + '_ {
        self.nodes.iter().map(|n| n.op.kind())
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if it tracks gradients and was reached.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.leaf_grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn zero_grads(&mut self) {
        for g in self.leaf_grads.iter_mut().flatten() {
            g.fill(T::zero());
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a leaf. Its gradient is tracked when the tensor [`requires_grad`](Tensor::requires_grad).
    pub fn leaf(&mut self, mut tensor: Tensor<T>) -> Var {
        let requires_grad = tensor.requires_grad();
        tensor.set_grad(None);
        self.push(tensor, Op::Leaf, requires_grad)
    }

    /// Records a gradient-tracked leaf.
    pub fn param(&mut self, tensor: Tensor<T>) -> Var {
        let mut tensor = tensor;
        tensor.set_grad(None);
        self.push(tensor, Op::Leaf, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, mut tensor: Tensor<T>) -> Var {
        tensor.set_grad(None);
        self.push(tensor, Op::Leaf, false)
    }

    fn build(&self, shape: Shape, data: Vec<T>) -> Tensor<T> {
        Tensor::new(shape, data).expect("op output shape is consistent")
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Shape> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op,
                left: sa,
                right: sb,
            });
        }
        Ok(sa)
    }

    /// 2-D convolution; `kernel` is `(c_out, c_in, k_h, k_w)`, `bias` holds `c_out` values.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, opts: Conv2dOptions) -> Result<Var> {
        let geom = ConvGeometry::new(self.shape(input), self.shape(kernel), opts)?;
        if let Some(b) = bias {
            let bs = self.shape(b);
            if bs.numel() != geom.kernel.n {
                return Err(Error::ShapeMismatch {
                    op: "conv2d bias",
                    left: geom.kernel,
                    right: bs,
                });
            }
        }
        let out = conv::forward(
            self.value(input).data(),
            self.value(kernel).data(),
            bias.map(|b| self.value(b).data()),
            &geom,
        );
        let value = self.build(geom.output_shape(), out);
        let mut deps = vec![input, kernel];
        deps.extend(bias);
        let rg = self.any_grad(&deps);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
            rg,
        ))
    }

    fn check_channel_params(&self, op: &'static str, c: usize, params: &[Var]) -> Result<()> {
        for &p in params {
            let n = self.shape(p).numel();
            if n != c {
                return Err(Error::ChannelMismatch {
                    op,
                    expected: n,
                    actual: c,
                });
            }
        }
        Ok(())
    }

    /// Batch normalization with batch statistics over `(n, h, w)` per channel.
    ///
    /// Returns the output and the batch statistics so the caller can update
    /// running estimates.
    pub fn batch_norm_train(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        epsilon: f64,
    ) -> Result<(Var, BatchNormStats<T>)> {
        let s = self.shape(input);
        self.check_channel_params("batch_norm", s.c, &[gamma, beta])?;
        let x = self.value(input).data();
        let count = s.n * s.plane();
        let inv_count = T::one() / T::from_usize(count);
        let eps = T::from_f64(epsilon);
        let mut mean = vec![T::zero(); s.c];
        let mut var = vec![T::zero(); s.c];
        for c in 0..s.c {
            let mut acc = T::zero();
            for n in 0..s.n {
                let start = (n * s.c + c) * s.plane();
                acc = acc + x[start..start + s.plane()].iter().copied().sum::<T>();
            }
            mean[c] = acc * inv_count;
            let mut sq = T::zero();
            for n in 0..s.n {
                let start = (n * s.c + c) * s.plane();
                sq = sq
                    + x[start..start + s.plane()]
                        .iter()
                        .map(|&v| (v - mean[c]) * (v - mean[c]))
                        .sum::<T>();
            }
            var[c] = sq * inv_count;
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (value, xhat) = self.normalize(input, gamma, beta, &mean, &inv_std);
        let rg = self.any_grad(&[input, gamma, beta]);
        let var_out = self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: true,
            },
            rg,
        );
        Ok((var_out, BatchNormStats { mean, var, count }))
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batch_norm_eval(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        epsilon: f64,
    ) -> Result<Var> {
        let s = self.shape(input);
        self.check_channel_params("batch_norm", s.c, &[gamma, beta])?;
        if running_mean.len() != s.c || running_var.len() != s.c {
            return Err(Error::ChannelMismatch {
                op: "batch_norm running stats",
                expected: running_mean.len(),
                actual: s.c,
            });
        }
        let eps = T::from_f64(epsilon);
        let inv_std: Vec<T> = running_var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (value, xhat) = self.normalize(input, gamma, beta, running_mean, &inv_std);
        let rg = self.any_grad(&[input, gamma, beta]);
        Ok(self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: false,
            },
            rg,
        ))
    }

    fn normalize(&self, input: Var, gamma: Var, beta: Var, mean: &[T], inv_std: &[T]) -> (Tensor<T>, Vec<T>) {
        let s = self.shape(input);
        let x = self.value(input).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        let p = s.plane();
        for n in 0..s.n {
            for c in 0..s.c {
                let r = (n * s.c + c) * p..(n * s.c + c + 1) * p;
                for ((xh, o), &v) in xhat[r.clone()].iter_mut().zip(&mut out[r.clone()]).zip(&x[r]) {
                    *xh = (v - mean[c]) * inv_std[c];
                    *o = g[c] * *xh + b[c];
                }
            }
        }
        (self.build(s, out), xhat)
    }

    fn unary(&mut self, input: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let t = self.value(input);
        let data = t.data().iter().map(|&v| f(v)).collect();
        let value = self.build(t.shape(), data);
        let rg = self.any_grad(&[input]);
        self.push(value, op, rg)
    }

    /// `max(x, 0)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, input: Var) -> Var {
        // NaN passes through so a corrupted batch still surfaces in the loss
        self.unary(input, |v| if v < T::zero() || v == T::zero() { T::zero() } else { v }, Op::Relu(input))
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        self.unary(input, sigmoid, Op::Sigmoid(input))
    }

    pub fn tanh(&mut self, input: Var) -> Var {
        self.unary(input, |v| v.tanh(), Op::Tanh(input))
    }

    /// Concatenates along the channel axis in argument order.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::Invalid("concat_channels needs at least one input".into()))?;
        let reference = self.shape(first);
        let mut c_total = 0;
        for (index, &v) in inputs.iter().enumerate() {
            let s = self.shape(v);
            if (s.n, s.h, s.w) != (reference.n, reference.h, reference.w) {
                return Err(Error::ConcatMismatch {
                    index,
                    shape: s,
                    reference,
                });
            }
            c_total += s.c;
        }
        let out_shape = reference.with_channels(c_total);
        let p = reference.plane();
        let mut data = Vec::with_capacity(out_shape.numel());
        for n in 0..reference.n {
            for &v in inputs {
                let t = self.value(v);
                let per = t.shape().c * p;
                data.extend_from_slice(&t.data()[n * per..(n + 1) * per]);
            }
        }
        let value = self.build(out_shape, data);
        let rg = self.any_grad(inputs);
        Ok(self.push(value, Op::Concat(inputs.to_vec()), rg))
    }

    /// Channels `start..start + len`.
    pub fn slice_channels(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(input);
        if len == 0 || start + len > s.c {
            return Err(Error::Invalid(format!(
                "slice_channels: range {start}..{} out of bounds for {s}",
                start + len
            )));
        }
        let p = s.plane();
        let x = self.value(input).data();
        let mut data = Vec::with_capacity(s.n * len * p);
        for n in 0..s.n {
            let base = (n * s.c + start) * p;
            data.extend_from_slice(&x[base..base + len * p]);
        }
        let value = self.build(s.with_channels(len), data);
        let rg = self.any_grad(&[input]);
        Ok(self.push(value, Op::SliceChannels { input, start }, rg))
    }

    /// Bilinear resize to `(out_h, out_w)` with half-pixel centers (align-corners = false).
    pub fn resize_bilinear(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let s = self.shape(input);
        if out_h == 0 || out_w == 0 {
            return Err(Error::Invalid(format!("resize target {out_h}x{out_w} is empty")));
        }
        let rows = AxisMap::<T>::new(s.h, out_h);
        let cols = AxisMap::<T>::new(s.w, out_w);
        let x = self.value(input).data();
        let mut out = vec![T::zero(); s.n * s.c * out_h * out_w];
        for (plane_in, plane_out) in x.chunks_exact(s.plane()).zip(out.chunks_exact_mut(out_h * out_w)) {
            for oy in 0..out_h {
                let (r0, r1, ly) = (rows.lo[oy], rows.hi[oy], rows.frac[oy]);
                let hy = T::one() - ly;
                for ox in 0..out_w {
                    let (c0, c1, lx) = (cols.lo[ox], cols.hi[ox], cols.frac[ox]);
                    let hx = T::one() - lx;
                    let top = hx * plane_in[r0 * s.w + c0] + lx * plane_in[r0 * s.w + c1];
                    let bot = hx * plane_in[r1 * s.w + c0] + lx * plane_in[r1 * s.w + c1];
                    plane_out[oy * out_w + ox] = hy * top + ly * bot;
                }
            }
        }
        let value = self.build(Shape::new(s.n, s.c, out_h, out_w), out);
        let rg = self.any_grad(&[input]);
        Ok(self.push(value, Op::Resize { input, rows, cols }, rg))
    }

    /// Bilinear upsampling by an integer factor.
    pub fn upsample_bilinear(&mut self, input: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(Error::Invalid("upsample factor must be at least 1".into()));
        }
        let s = self.shape(input);
        self.resize_bilinear(input, s.h * factor, s.w * factor)
    }

    /// Mean over `(h, w)`, giving shape `(n, c, 1, 1)`.
    pub fn global_avg_pool(&mut self, input: Var) -> Var {
        let s = self.shape(input);
        let inv = T::one() / T::from_usize(s.plane());
        let data = self
            .value(input)
            .data()
            .chunks_exact(s.plane())
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let value = self.build(Shape::new(s.n, s.c, 1, 1), data);
        let rg = self.any_grad(&[input]);
        self.push(value, Op::GlobalAvgPool(input), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.same_shape("add", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        let value = self.build(s, data);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.same_shape("mul", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
        let value = self.build(s, data);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Sum of all elements as a `1×1×1×1` scalar.
    pub fn sum(&mut self, input: Var) -> Var {
        let total = self.value(input).data().iter().copied().sum::<T>();
        let value = Tensor::scalar(total);
        let rg = self.any_grad(&[input]);
        self.push(value, Op::Sum(input), rg)
    }

    /// Batch Dice loss `1 − (2·Σ(p·t) + smooth) / (Σp + Σt + smooth)`.
    pub fn dice_loss(&mut self, pred: Var, target: Var, smooth: f64) -> Result<Var> {
        self.same_shape("dice_loss", pred, target)?;
        let p = self.value(pred).data();
        let t = self.value(target).data();
        let smooth = T::from_f64(smooth);
        let inter = p.iter().zip(t).map(|(&a, &b)| a * b).sum::<T>();
        let sp = p.iter().copied().sum::<T>();
        let st = t.iter().copied().sum::<T>();
        let two = T::from_f64(2.0);
        let numer = two * inter + smooth;
        let denom = sp + st + smooth;
        let value = Tensor::scalar(T::one() - numer / denom);
        let rg = self.any_grad(&[pred, target]);
        Ok(self.push(
            value,
            Op::DiceLoss {
                pred,
                target,
                numer,
                denom,
            },
            rg,
        ))
    }

    /// Back-propagates from a scalar `loss`, accumulating into leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyTape);
        }
        let loss_shape = self.shape(loss);
        if !loss_shape.is_scalar() {
            return Err(Error::NonScalarLoss(loss_shape));
        }
        let nodes = &self.nodes;
        let leaf_grads = &mut self.leaf_grads;
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(mut g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            if self.fault == Some(node.op.kind()) {
                let k = T::from_f64(1.01);
                g.iter_mut().for_each(|v| *v = *v * k);
            }
            let mut acc = Accumulator {
                nodes,
                grads: &mut grads,
            };
            match &node.op {
                Op::Leaf => match &mut leaf_grads[i] {
                    Some(existing) => existing.iter_mut().zip(&g).for_each(|(e, &v)| *e = *e + v),
                    slot @ None => *slot = Some(g),
                },
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    geom,
                } => {
                    let x = nodes[input.0].value.data();
                    let k = nodes[kernel.0].value.data();
                    // Each gradient buffer is taken out so the three can be borrowed at once.
                    let mut dx = acc.take(*input);
                    let mut dk = acc.take(*kernel);
                    let mut db = bias.and_then(|b| acc.take(b));
                    conv::backward(x, k, geom, &g, dx.as_deref_mut(), dk.as_deref_mut(), db.as_deref_mut());
                    acc.restore(*input, dx);
                    acc.restore(*kernel, dk);
                    if let Some(b) = bias {
                        acc.restore(*b, db);
                    }
                }
                Op::BatchNorm {
                    input,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    batch_stats,
                } => {
                    let s = nodes[input.0].value.shape();
                    let gv = nodes[gamma.0].value.data();
                    let p = s.plane();
                    let mut sum_dy = vec![T::zero(); s.c];
                    let mut sum_dy_xhat = vec![T::zero(); s.c];
                    for n in 0..s.n {
                        for c in 0..s.c {
                            let r = (n * s.c + c) * p..(n * s.c + c + 1) * p;
                            for (&dy, &xh) in g[r.clone()].iter().zip(&xhat[r]) {
                                sum_dy[c] = sum_dy[c] + dy;
                                sum_dy_xhat[c] = sum_dy_xhat[c] + dy * xh;
                            }
                        }
                    }
                    acc.add_with(*gamma, |dg| dg.iter_mut().zip(&sum_dy_xhat).for_each(|(d, &v)| *d = *d + v));
                    acc.add_with(*beta, |db| db.iter_mut().zip(&sum_dy).for_each(|(d, &v)| *d = *d + v));
                    let m = T::from_usize(s.n * p);
                    acc.add_with(*input, |dx| {
                        for n in 0..s.n {
                            for c in 0..s.c {
                                let r = (n * s.c + c) * p..(n * s.c + c + 1) * p;
                                let scale = gv[c] * inv_std[c];
                                if *batch_stats {
                                    let k = scale / m;
                                    for ((d, &dy), &xh) in dx[r.clone()].iter_mut().zip(&g[r.clone()]).zip(&xhat[r]) {
                                        *d = *d + k * (m * dy - sum_dy[c] - xh * sum_dy_xhat[c]);
                                    }
                                } else {
                                    for (d, &dy) in dx[r.clone()].iter_mut().zip(&g[r]) {
                                        *d = *d + scale * dy;
                                    }
                                }
                            }
                        }
                    });
                }
                Op::Relu(input) => {
                    let x = nodes[input.0].value.data();
                    acc.add_with(*input, |dx| {
                        for ((d, &dy), &v) in dx.iter_mut().zip(&g).zip(x) {
                            if v > T::zero() {
                                *d = *d + dy;
                            }
                        }
                    });
                }
                Op::Sigmoid(input) => {
                    let y = node.value.data();
                    acc.add_with(*input, |dx| {
                        for ((d, &dy), &s) in dx.iter_mut().zip(&g).zip(y) {
                            *d = *d + dy * s * (T::one() - s);
                        }
                    });
                }
                Op::Tanh(input) => {
                    let y = node.value.data();
                    acc.add_with(*input, |dx| {
                        for ((d, &dy), &t) in dx.iter_mut().zip(&g).zip(y) {
                            *d = *d + dy * (T::one() - t * t);
                        }
                    });
                }
                Op::Concat(inputs) => {
                    let s = node.value.shape();
                    let p = s.plane();
                    let mut offset = 0;
                    for &v in inputs {
                        let c = nodes[v.0].value.shape().c;
                        acc.add_with(v, |dx| {
                            for n in 0..s.n {
                                let src = &g[(n * s.c + offset) * p..(n * s.c + offset + c) * p];
                                let dst = &mut dx[n * c * p..(n + 1) * c * p];
                                dst.iter_mut().zip(src).for_each(|(d, &v)| *d = *d + v);
                            }
                        });
                        offset += c;
                    }
                }
                Op::SliceChannels { input, start } => {
                    let s = nodes[input.0].value.shape();
                    let len = node.value.shape().c;
                    let p = s.plane();
                    acc.add_with(*input, |dx| {
                        for n in 0..s.n {
                            let dst = &mut dx[(n * s.c + start) * p..(n * s.c + start + len) * p];
                            let src = &g[n * len * p..(n + 1) * len * p];
                            dst.iter_mut().zip(src).for_each(|(d, &v)| *d = *d + v);
                        }
                    });
                }
                Op::Resize { input, rows, cols } => {
                    let s = nodes[input.0].value.shape();
                    let os = node.value.shape();
                    acc.add_with(*input, |dx| {
                        for (din, gout) in dx.chunks_exact_mut(s.plane()).zip(g.chunks_exact(os.plane())) {
                            for oy in 0..os.h {
                                let (r0, r1, ly) = (rows.lo[oy], rows.hi[oy], rows.frac[oy]);
                                let hy = T::one() - ly;
                                for ox in 0..os.w {
                                    let (c0, c1, lx) = (cols.lo[ox], cols.hi[ox], cols.frac[ox]);
                                    let hx = T::one() - lx;
                                    let d = gout[oy * os.w + ox];
                                    din[r0 * s.w + c0] = din[r0 * s.w + c0] + hy * hx * d;
                                    din[r0 * s.w + c1] = din[r0 * s.w + c1] + hy * lx * d;
                                    din[r1 * s.w + c0] = din[r1 * s.w + c0] + ly * hx * d;
                                    din[r1 * s.w + c1] = din[r1 * s.w + c1] + ly * lx * d;
                                }
                            }
                        }
                    });
                }
                Op::GlobalAvgPool(input) => {
                    let s = nodes[input.0].value.shape();
                    let inv = T::one() / T::from_usize(s.plane());
                    acc.add_with(*input, |dx| {
                        for (plane, &dy) in dx.chunks_exact_mut(s.plane()).zip(&g) {
                            plane.iter_mut().for_each(|d| *d = *d + dy * inv);
                        }
                    });
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        acc.add_with(v, |dx| dx.iter_mut().zip(&g).for_each(|(d, &dy)| *d = *d + dy));
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    acc.add_with(*a, |dx| {
                        dx.iter_mut().zip(&g).zip(bv).for_each(|((d, &dy), &o)| *d = *d + dy * o)
                    });
                    acc.add_with(*b, |dx| {
                        dx.iter_mut().zip(&g).zip(av).for_each(|((d, &dy), &o)| *d = *d + dy * o)
                    });
                }
                Op::Sum(input) => {
                    let dy = g[0];
                    acc.add_with(*input, |dx| dx.iter_mut().for_each(|d| *d = *d + dy));
                }
                Op::DiceLoss {
                    pred,
                    target,
                    numer,
                    denom,
                } => {
                    // L = 1 − N/D, N = 2Σpt + s, D = Σp + Σt + s
                    // ∂L/∂p_i = −(2·t_i·D − N) / D²   (symmetric in p and t)
                    let dy = g[0];
                    let d2 = *denom * *denom;
                    let two = T::from_f64(2.0);
                    let (pv, tv) = (nodes[pred.0].value.data(), nodes[target.0].value.data());
                    acc.add_with(*pred, |dx| {
                        for (d, &t) in dx.iter_mut().zip(tv) {
                            *d = *d - dy * (two * t * *denom - *numer) / d2;
                        }
                    });
                    acc.add_with(*target, |dx| {
                        for (d, &p) in dx.iter_mut().zip(pv) {
                            *d = *d - dy * (two * p * *denom - *numer) / d2;
                        }
                    });
                }
            }
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Lazily allocated gradient buffers for one backward pass.
struct Accumulator<'a, T: Scalar> {
    nodes: &'a [Node<T>],
    grads: &'a mut Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Accumulator<'_, T> {
    fn add_with(&mut self, v: Var, f: impl FnOnce(&mut [T])) {
        if let Some(mut buf) = self.take(v) {
            f(&mut buf);
            self.restore(v, Some(buf));
        }
    }

    /// Removes the buffer of `v` (allocating zeros), or `None` if `v` needs no gradient.
    fn take(&mut self, v: Var) -> Option<Vec<T>> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        Some(
            self.grads[v.0]
                .take()
                .unwrap_or_else(|| vec![T::zero(); node.value.numel()]),
        )
    }

    fn restore(&mut self, v: Var, buf: Option<Vec<T>>) {
        if buf.is_some() {
            self.grads[v.0] = buf;
        }
    }
}
