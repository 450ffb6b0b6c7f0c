//! Patch-gather (im2col) convolution kernels.
//!
//! For each sample the input is unrolled into a `(c_in·k_h·k_w) × (h_out·w_out)`
//! patch matrix and reduced against the `c_out × (c_in·k_h·k_w)` kernel matrix
//! with one GEMM. Every output element is therefore a dot product over the patch
//! axis in a blocking order fixed by the layer shape, which keeps the forward
//! and backward passes bit-reproducible.

use super::{Scalar, Shape};
use crate::error::{Error, Result};

/// Stride, dilation and zero-padding of a 2-D convolution, each `(vertical, horizontal)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dOptions {
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    pub padding: (usize, usize),
}

impl Default for Conv2dOptions {
    fn default() -> Self {
        Self {
            stride: (1, 1),
            dilation: (1, 1),
            padding: (0, 0),
        }
    }
}

impl Conv2dOptions {
    pub fn new(stride: usize, dilation: usize, padding: usize) -> Self {
        Self {
            stride: (stride, stride),
            dilation: (dilation, dilation),
            padding: (padding, padding),
        }
    }

    /// Padding that keeps the spatial size for an odd `kernel` at stride 1.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        Self::new(1, dilation, dilation * (kernel - 1) / 2)
    }

    /// `floor((len + 2·pad − dilation·(k − 1) − 1) / stride) + 1`, or `None` when the
    /// dilated kernel does not fit.
    pub fn output_len(len: usize, kernel: usize, stride: usize, dilation: usize, pad: usize) -> Option<usize> {
        let span = dilation * (kernel - 1) + 1;
        let padded = len + 2 * pad;
        if kernel == 0 || stride == 0 || dilation == 0 || padded < span {
            return None;
        }
        Some((padded - span) / stride + 1)
    }

    pub fn output_size(&self, input: Shape, kernel: Shape) -> Result<(usize, usize)> {
        let oh = Self::output_len(input.h, kernel.h, self.stride.0, self.dilation.0, self.padding.0);
        let ow = Self::output_len(input.w, kernel.w, self.stride.1, self.dilation.1, self.padding.1);
        match (oh, ow) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(Error::EmptyOutput { input, kernel }),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub input: Shape,
    pub kernel: Shape,
    pub out_h: usize,
    pub out_w: usize,
    pub opts: Conv2dOptions,
}

impl ConvGeometry {
    pub fn new(input: Shape, kernel: Shape, opts: Conv2dOptions) -> Result<Self> {
        if input.c != kernel.c {
            return Err(Error::ChannelMismatch {
                op: "conv2d",
                expected: kernel.c,
                actual: input.c,
            });
        }
        let (out_h, out_w) = opts.output_size(input, kernel)?;
        Ok(Self {
            input,
            kernel,
            out_h,
            out_w,
            opts,
        })
    }

    pub fn output_shape(&self) -> Shape {
        Shape::new(self.input.n, self.kernel.n, self.out_h, self.out_w)
    }

    /// Rows of the patch matrix.
    fn patch_len(&self) -> usize {
        self.kernel.c * self.kernel.h * self.kernel.w
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    /// A 1×1, stride-1, unpadded convolution reads its input as the patch matrix directly.
    fn is_pointwise(&self) -> bool {
        self.kernel.h == 1
            && self.kernel.w == 1
            && self.opts.stride == (1, 1)
            && self.opts.padding == (0, 0)
    }
}

/// Half-open range of output positions whose tap `o·stride + offset` lands in `[0, len)`.
fn valid_range(out_len: usize, len: usize, stride: usize, offset: isize) -> (usize, usize) {
    let lo = if offset < 0 {
        ((-offset) as usize).div_ceil(stride)
    } else {
        0
    };
    let last = len as isize - 1 - offset;
    let hi = if last < 0 {
        0
    } else {
        (last as usize / stride + 1).min(out_len)
    };
    (lo.min(hi), hi)
}

/// Unrolls one sample (`c·h·w` values) into `col` (`patch_len × out_plane`).
fn im2col<T: Scalar>(src: &[T], g: &ConvGeometry, col: &mut [T]) {
    let (h, w) = (g.input.h, g.input.w);
    let (kh, kw) = (g.kernel.h, g.kernel.w);
    let (sh, sw) = g.opts.stride;
    let (dh, dw) = g.opts.dilation;
    let (ph, pw) = g.opts.padding;
    let (oh, ow) = (g.out_h, g.out_w);
    let plane = oh * ow;
    for ci in 0..g.kernel.c {
        let chan = &src[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            let off_y = (ki * dh) as isize - ph as isize;
            let (y_lo, y_hi) = valid_range(oh, h, sh, off_y);
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let dst = &mut col[row * plane..(row + 1) * plane];
                let off_x = (kj * dw) as isize - pw as isize;
                let (x_lo, x_hi) = valid_range(ow, w, sw, off_x);
                for oy in 0..oh {
                    let drow = &mut dst[oy * ow..(oy + 1) * ow];
                    if oy < y_lo || oy >= y_hi || x_lo >= x_hi {
                        drow.fill(T::zero());
                        continue;
                    }
                    let iy = (oy * sh) as isize + off_y;
                    let srow = &chan[iy as usize * w..(iy as usize + 1) * w];
                    drow[..x_lo].fill(T::zero());
                    drow[x_hi..].fill(T::zero());
                    let ix0 = ((x_lo * sw) as isize + off_x) as usize;
                    if sw == 1 {
                        drow[x_lo..x_hi].copy_from_slice(&srow[ix0..ix0 + (x_hi - x_lo)]);
                    } else {
                        for (k, d) in drow[x_lo..x_hi].iter_mut().enumerate() {
                            *d = srow[ix0 + k * sw];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `col` back into one sample, accumulating.
fn col2im_add<T: Scalar>(col: &[T], g: &ConvGeometry, dst: &mut [T]) {
    let (h, w) = (g.input.h, g.input.w);
    let (kh, kw) = (g.kernel.h, g.kernel.w);
    let (sh, sw) = g.opts.stride;
    let (dh, dw) = g.opts.dilation;
    let (ph, pw) = g.opts.padding;
    let (oh, ow) = (g.out_h, g.out_w);
    let plane = oh * ow;
    for ci in 0..g.kernel.c {
        let chan = &mut dst[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            let off_y = (ki * dh) as isize - ph as isize;
            let (y_lo, y_hi) = valid_range(oh, h, sh, off_y);
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let src = &col[row * plane..(row + 1) * plane];
                let off_x = (kj * dw) as isize - pw as isize;
                let (x_lo, x_hi) = valid_range(ow, w, sw, off_x);
                if x_lo >= x_hi {
                    continue;
                }
                let ix0 = ((x_lo * sw) as isize + off_x) as usize;
                for oy in y_lo..y_hi {
                    let iy = ((oy * sh) as isize + off_y) as usize;
                    let srow = &src[oy * ow + x_lo..oy * ow + x_hi];
                    let drow = &mut chan[iy * w..(iy + 1) * w];
                    for (k, &v) in srow.iter().enumerate() {
                        drow[ix0 + k * sw] = drow[ix0 + k * sw] + v;
                    }
                }
            }
        }
    }
}

pub(crate) fn forward<T: Scalar>(x: &[T], kernel: &[T], bias: Option<&[T]>, g: &ConvGeometry) -> Vec<T> {
    let (c_out, k_len, plane) = (g.kernel.n, g.patch_len(), g.out_plane());
    let in_per = g.input.c * g.input.plane();
    let mut out = vec![T::zero(); g.input.n * c_out * plane];
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); k_len * plane]
    };
    for b in 0..g.input.n {
        let xb = &x[b * in_per..(b + 1) * in_per];
        let patches: &[T] = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, g, &mut col);
            &col
        };
        let ob = &mut out[b * c_out * plane..(b + 1) * c_out * plane];
        T::gemm(c_out, k_len, plane, kernel, (k_len, 1), patches, (plane, 1), T::zero(), ob);
        if let Some(bias) = bias {
            for (row, &bv) in ob.chunks_exact_mut(plane).zip(bias) {
                row.iter_mut().for_each(|v| *v = *v + bv);
            }
        }
    }
    out
}

/// Accumulates input, kernel and bias gradients for upstream gradient `dout`.
pub(crate) fn backward<T: Scalar>(
    x: &[T],
    kernel: &[T],
    g: &ConvGeometry,
    dout: &[T],
    dx: Option<&mut [T]>,
    dkernel: Option<&mut [T]>,
    dbias: Option<&mut [T]>,
) {
    let (c_out, k_len, plane) = (g.kernel.n, g.patch_len(), g.out_plane());
    let in_per = g.input.c * g.input.plane();
    let pointwise = g.is_pointwise();

    if let Some(db) = dbias {
        for b in 0..g.input.n {
            let ob = &dout[b * c_out * plane..(b + 1) * c_out * plane];
            for (acc, row) in db.iter_mut().zip(ob.chunks_exact(plane)) {
                *acc = *acc + row.iter().copied().sum::<T>();
            }
        }
    }

    if let Some(dk) = dkernel {
        let mut col = if pointwise { Vec::new() } else { vec![T::zero(); k_len * plane] };
        for b in 0..g.input.n {
            let xb = &x[b * in_per..(b + 1) * in_per];
            let patches: &[T] = if pointwise {
                xb
            } else {
                im2col(xb, g, &mut col);
                &col
            };
            let ob = &dout[b * c_out * plane..(b + 1) * c_out * plane];
            // dK (c_out × k_len) += dOut (c_out × plane) · patchesᵀ (plane × k_len)
            T::gemm(c_out, plane, k_len, ob, (plane, 1), patches, (1, plane), T::one(), dk);
        }
    }

    if let Some(dx) = dx {
        let mut dcol = vec![T::zero(); if pointwise { 0 } else { k_len * plane }];
        for b in 0..g.input.n {
            let ob = &dout[b * c_out * plane..(b + 1) * c_out * plane];
            let dxb = &mut dx[b * in_per..(b + 1) * in_per];
            // dPatches (k_len × plane) = Kᵀ (k_len × c_out) · dOut (c_out × plane)
            if pointwise {
                T::gemm(k_len, c_out, plane, kernel, (1, k_len), ob, (plane, 1), T::one(), dxb);
            } else {
                T::gemm(k_len, c_out, plane, kernel, (1, k_len), ob, (plane, 1), T::zero(), &mut dcol);
                col2im_add(&dcol, g, dxb);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct seven-loop convolution used as the reference.
    fn naive(x: &[f64], xs: Shape, k: &[f64], ks: Shape, o: Conv2dOptions) -> (Vec<f64>, usize, usize) {
        let (oh, ow) = o.output_size(xs, ks).unwrap();
        let mut out = vec![0.0; xs.n * ks.n * oh * ow];
        for n in 0..xs.n {
            for co in 0..ks.n {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..xs.c {
                            for ki in 0..ks.h {
                                for kj in 0..ks.w {
                                    let iy = (oy * o.stride.0 + ki * o.dilation.0) as isize - o.padding.0 as isize;
                                    let ix = (ox * o.stride.1 + kj * o.dilation.1) as isize - o.padding.1 as isize;
                                    if iy < 0 || ix < 0 || iy >= xs.h as isize || ix >= xs.w as isize {
                                        continue;
                                    }
                                    acc += x[((n * xs.c + ci) * xs.h + iy as usize) * xs.w + ix as usize]
                                        * k[((co * ks.c + ci) * ks.h + ki) * ks.w + kj];
                                }
                            }
                        }
                        out[((n * ks.n + co) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        (out, oh, ow)
    }

    #[test]
    fn valid_range_bounds() {
        // stride 1, pad 1, kernel tap 0: ix = ox - 1 valid for ox in 1..=len
        assert_eq!(valid_range(5, 5, 1, -1), (1, 5));
        assert_eq!(valid_range(5, 5, 1, 1), (0, 4));
        // stride 2 on 8 with tap offset -1 -> ox in 1..4
        assert_eq!(valid_range(4, 8, 2, -1), (1, 4));
        // tap entirely in the padding
        assert_eq!(valid_range(3, 3, 1, 5).0, valid_range(3, 3, 1, 5).1);
    }

    #[test]
    fn matches_naive_over_geometries() {
        let xs = Shape::new(2, 3, 7, 6);
        let x: Vec<f64> = (0..xs.numel()).map(|i| ((i * 37 % 101) as f64 - 50.0) / 25.0).collect();
        for &(kk, s, d, p) in &[(3, 1, 1, 1), (3, 2, 1, 1), (1, 1, 1, 0), (1, 4, 1, 0), (3, 1, 2, 2), (3, 2, 3, 3), (3, 1, 1, 0)] {
            let ks = Shape::new(4, 3, kk, kk);
            let k: Vec<f64> = (0..ks.numel()).map(|i| ((i * 13 % 29) as f64 - 14.0) / 7.0).collect();
            let o = Conv2dOptions::new(s, d, p);
            let g = ConvGeometry::new(xs, ks, o).unwrap();
            let got = forward(&x, &k, None, &g);
            let (want, oh, ow) = naive(&x, xs, &k, ks, o);
            assert_eq!((g.out_h, g.out_w), (oh, ow));
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "k={kk} s={s} d={d} p={p}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let xs = Shape::new(1, 2, 5, 4);
        let ks = Shape::new(1, 2, 3, 3);
        let g = ConvGeometry::new(xs, ks, Conv2dOptions::new(2, 2, 2)).unwrap();
        let x: Vec<f64> = (0..xs.numel()).map(|i| (i as f64 * 0.7).sin()).collect();
        let n_col = g.patch_len() * g.out_plane();
        let y: Vec<f64> = (0..n_col).map(|i| (i as f64 * 1.3).cos()).collect();
        let mut col = vec![0.0; n_col];
        im2col(&x, &g, &mut col);
        let lhs: f64 = col.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; xs.numel()];
        col2im_add(&y, &g, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn kernel_that_does_not_fit_is_rejected() {
        let err = ConvGeometry::new(Shape::new(1, 1, 2, 2), Shape::new(1, 1, 3, 3), Conv2dOptions::new(1, 2, 0))
            .unwrap_err();
        assert!(matches!(err, Error::EmptyOutput { .. }));
    }
}
