//! Forward and backward kernels operating on plain tensors.
//!
//! Convolutions lower to im2col + GEMM per batch item. Weight gradients are
//! accumulated per item and then summed in batch order, which keeps the
//! result independent of the thread count.

use crate::gemm::{gemm, Mat};
use crate::{par, Real, Result, Shape, Tensor, TensorError};

/// Geometry of a 2-D convolution over one batch item.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(
        op: &'static str,
        channels: usize,
        h: usize,
        w: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if kernel == 0 || stride == 0 {
            return Err(TensorError::arg(
                op,
                format!("kernel {kernel} and stride {stride} must be ≥ 1"),
            ));
        }
        if h + 2 * pad < kernel || w + 2 * pad < kernel {
            return Err(TensorError::shape(
                op,
                format!("input {h}×{w} with padding {pad} is smaller than kernel {kernel}"),
            ));
        }
        Ok(ConvGeom {
            channels,
            h,
            w,
            kernel,
            stride,
            pad,
            out_h: (h + 2 * pad - kernel) / stride + 1,
            out_w: (w + 2 * pad - kernel) / stride + 1,
        })
    }

    fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Output side length of a convolution, or `None` if the kernel does not fit.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    (stride > 0 && len + 2 * pad >= kernel).then(|| (len + 2 * pad - kernel) / stride + 1)
}

fn im2col(src: &[Real], g: &ConvGeom, cols: &mut [Real]) {
    let (k, s, p) = (g.kernel, g.stride, g.pad as isize);
    let ncol = g.col_cols();
    for c in 0..g.channels {
        let plane = &src[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * ncol..(row + 1) * ncol];
                for oy in 0..g.out_h {
                    let iy = (oy * s + ky) as isize - p;
                    let out_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let ix = (ox * s + kx) as isize - p;
                        *v = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[Real], g: &ConvGeom, dst: &mut [Real]) {
    let (k, s, p) = (g.kernel, g.stride, g.pad as isize);
    let ncol = g.col_cols();
    for c in 0..g.channels {
        let plane = &mut dst[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * ncol..(row + 1) * ncol];
                for oy in 0..g.out_h {
                    let iy = (oy * s + ky) as isize - p;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let src_row = &src[oy * g.out_w..(oy + 1) * g.out_w];
                    for (ox, v) in src_row.iter().enumerate() {
                        let ix = (ox * s + kx) as isize - p;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst_row[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn check_conv(
    op: &'static str,
    x: Shape,
    w: Shape,
    bias: Option<Shape>,
    stride: usize,
    pad: usize,
) -> Result<ConvGeom> {
    if w.h != w.w {
        return Err(TensorError::shape(op, format!("kernel must be square, got {w}")));
    }
    if x.c != w.c {
        return Err(TensorError::shape(
            op,
            format!("input {x} has {} channels but weight {w} expects {}", x.c, w.c),
        ));
    }
    if let Some(b) = bias {
        if b != Shape::new(1, w.n, 1, 1) {
            return Err(TensorError::shape(
                op,
                format!("bias {b} does not match {} output channels", w.n),
            ));
        }
    }
    ConvGeom::new(op, x.c, x.h, x.w, w.h, stride, pad)
}

/// 2-D cross-correlation. `weight` is `C_out × C_in × k × k`, `bias` is
/// `1 × C_out × 1 × 1`.
pub fn conv2d(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let g = check_conv(
        "conv2d",
        x.shape(),
        weight.shape(),
        bias.map(Tensor::shape),
        stride,
        pad,
    )?;
    let c_out = weight.shape().n;
    let out_shape = Shape::new(x.shape().n, c_out, g.out_h, g.out_w);
    let mut out = Tensor::zeros(out_shape);
    let wmat = Mat::new(weight.data(), c_out, g.col_rows());
    par::for_each_chunk_mut(out.data_mut(), out_shape.item(), |n, y| {
        let src = x.item(n);
        if g.is_pointwise() {
            gemm(wmat, Mat::new(src, g.col_rows(), g.col_cols()), 0.0, y);
        } else {
            let mut cols = vec![0.0; g.col_rows() * g.col_cols()];
            im2col(src, &g, &mut cols);
            gemm(wmat, Mat::new(&cols, g.col_rows(), g.col_cols()), 0.0, y);
        }
        if let Some(b) = bias {
            for (co, plane) in y.chunks_mut(g.col_cols()).enumerate() {
                let bv = b.data()[co];
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
    });
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to its inputs.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
    need_input: bool,
) -> Result<ConvGrads> {
    let g = check_conv("conv2d_backward", x.shape(), weight.shape(), None, stride, pad)?;
    let c_out = weight.shape().n;
    let expect = Shape::new(x.shape().n, c_out, g.out_h, g.out_w);
    if grad_out.shape() != expect {
        return Err(TensorError::shape(
            "conv2d_backward",
            format!("output gradient {} should be {expect}", grad_out.shape()),
        ));
    }
    let (rows, ncol) = (g.col_rows(), g.col_cols());
    let partials = par::map_indexed(x.shape().n, |n| {
        let gy = Mat::new(grad_out.item(n), c_out, ncol);
        let mut dw = vec![0.0; c_out * rows];
        if g.is_pointwise() {
            gemm(gy, Mat::t(x.item(n), rows, ncol), 0.0, &mut dw);
        } else {
            let mut cols = vec![0.0; rows * ncol];
            im2col(x.item(n), &g, &mut cols);
            gemm(gy, Mat::t(&cols, rows, ncol), 0.0, &mut dw);
        }
        dw
    });
    let mut dweight = Tensor::zeros(weight.shape());
    for p in &partials {
        for (a, b) in dweight.data_mut().iter_mut().zip(p) {
            *a += b;
        }
    }

    let mut dbias = Tensor::zeros(Shape::new(1, c_out, 1, 1));
    for n in 0..x.shape().n {
        for (co, plane) in grad_out.item(n).chunks(ncol).enumerate() {
            dbias.data_mut()[co] += plane.iter().sum::<Real>();
        }
    }

    let input = need_input.then(|| {
        let mut dx = Tensor::zeros(x.shape());
        let wt = Mat::t(weight.data(), c_out, rows);
        par::for_each_chunk_mut(dx.data_mut(), x.shape().item(), |n, dst| {
            let gy = Mat::new(grad_out.item(n), c_out, ncol);
            if g.is_pointwise() {
                gemm(wt, gy, 0.0, dst);
            } else {
                let mut cols = vec![0.0; rows * ncol];
                gemm(wt, gy, 0.0, &mut cols);
                col2im(&cols, &g, dst);
            }
        });
        dx
    });
    Ok(ConvGrads {
        input,
        weight: dweight,
        bias: dbias,
    })
}

fn check_transposed(x: Shape, w: Shape, stride: usize, pad: usize) -> Result<ConvGeom> {
    const OP: &str = "transposed_conv2d";
    if w.h != w.w {
        return Err(TensorError::shape(OP, format!("kernel must be square, got {w}")));
    }
    if x.c != w.n {
        return Err(TensorError::shape(
            OP,
            format!("input {x} has {} channels but weight {w} expects {}", x.c, w.n),
        ));
    }
    if stride == 0 || x.h == 0 || x.w == 0 {
        return Err(TensorError::arg(OP, "stride and input size must be ≥ 1"));
    }
    let full_h = (x.h - 1) * stride + w.h;
    let full_w = (x.w - 1) * stride + w.w;
    if full_h <= 2 * pad || full_w <= 2 * pad {
        return Err(TensorError::arg(OP, format!("padding {pad} too large")));
    }
    // Geometry of the forward convolution this operation is the adjoint of.
    let g = ConvGeom::new(OP, w.c, full_h - 2 * pad, full_w - 2 * pad, w.h, stride, pad)?;
    debug_assert_eq!((g.out_h, g.out_w), (x.h, x.w));
    Ok(g)
}

/// Transposed convolution. `weight` is `C_in × C_out × k × k`; output side
/// length is `(len − 1)·stride + k − 2·pad`.
pub fn transposed_conv2d(x: &Tensor, weight: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let g = check_transposed(x.shape(), weight.shape(), stride, pad)?;
    let c_in = x.shape().c;
    let out_shape = Shape::new(x.shape().n, g.channels, g.h, g.w);
    let mut out = Tensor::zeros(out_shape);
    let (rows, ncol) = (g.col_rows(), g.col_cols());
    par::for_each_chunk_mut(out.data_mut(), out_shape.item(), |n, dst| {
        let mut cols = vec![0.0; rows * ncol];
        gemm(
            Mat::t(weight.data(), c_in, rows),
            Mat::new(x.item(n), c_in, ncol),
            0.0,
            &mut cols,
        );
        col2im(&cols, &g, dst);
    });
    Ok(out)
}

/// Gradients of [`transposed_conv2d`]: `(input, weight)`.
pub fn transposed_conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
    need_input: bool,
) -> Result<(Option<Tensor>, Tensor)> {
    let g = check_transposed(x.shape(), weight.shape(), stride, pad)?;
    let c_in = x.shape().c;
    let expect = Shape::new(x.shape().n, g.channels, g.h, g.w);
    if grad_out.shape() != expect {
        return Err(TensorError::shape(
            "transposed_conv2d_backward",
            format!("output gradient {} should be {expect}", grad_out.shape()),
        ));
    }
    let (rows, ncol) = (g.col_rows(), g.col_cols());
    let per_item = par::map_indexed(x.shape().n, |n| {
        let mut cols = vec![0.0; rows * ncol];
        im2col(grad_out.item(n), &g, &mut cols);
        let mut dw = vec![0.0; c_in * rows];
        gemm(
            Mat::new(x.item(n), c_in, ncol),
            Mat::t(&cols, rows, ncol),
            0.0,
            &mut dw,
        );
        let dx = need_input.then(|| {
            let mut dx = vec![0.0; c_in * ncol];
            gemm(
                Mat::new(weight.data(), c_in, rows),
                Mat::new(&cols, rows, ncol),
                0.0,
                &mut dx,
            );
            dx
        });
        (dx, dw)
    });
    let mut dweight = Tensor::zeros(weight.shape());
    let mut dx = need_input.then(|| Tensor::zeros(x.shape()));
    for (n, (px, pw)) in per_item.into_iter().enumerate() {
        for (a, b) in dweight.data_mut().iter_mut().zip(&pw) {
            *a += b;
        }
        if let (Some(dx), Some(px)) = (dx.as_mut(), px) {
            let k = x.shape().item();
            dx.data_mut()[n * k..(n + 1) * k].copy_from_slice(&px);
        }
    }
    Ok((dx, dweight))
}

/// Sentinel argmax for a window whose maximum came from zero padding.
pub const PAD_ARGMAX: u32 = u32::MAX;

/// Max pooling with symmetric zero padding. Returns the pooled tensor and,
/// per output element, the in-plane index of the selected input (first
/// maximum in scan order), or [`PAD_ARGMAX`] when a padding zero won.
pub fn maxpool(x: &Tensor, kernel: usize, stride: usize, pad: usize) -> Result<(Tensor, Vec<u32>)> {
    let s = x.shape();
    let g = ConvGeom::new("maxpool", s.c, s.h, s.w, kernel, stride, pad)?;
    let out_shape = Shape::new(s.n, s.c, g.out_h, g.out_w);
    let mut out = Tensor::zeros(out_shape);
    let mut arg = vec![0u32; out_shape.numel()];
    let plane_out = out_shape.plane();
    let mut pairs: Vec<(&mut [Real], &mut [u32])> = out
        .data_mut()
        .chunks_mut(plane_out.max(1))
        .zip(arg.chunks_mut(plane_out.max(1)))
        .collect();
    par::for_each_chunk_mut(&mut pairs, 1, |i, pair| {
        let (vals, idx) = &mut pair[0];
        let src = x.plane(i / s.c, i % s.c);
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let mut best = Real::NEG_INFINITY;
                let mut best_i = PAD_ARGMAX;
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        let inside = iy >= 0 && ix >= 0 && (iy as usize) < s.h && (ix as usize) < s.w;
                        let (v, at) = if inside {
                            let at = iy as usize * s.w + ix as usize;
                            (src[at], at as u32)
                        } else {
                            (0.0, PAD_ARGMAX)
                        };
                        if v > best {
                            best = v;
                            best_i = at;
                        }
                    }
                }
                vals[oy * g.out_w + ox] = best;
                idx[oy * g.out_w + ox] = best_i;
            }
        }
    });
    drop(pairs);
    Ok((out, arg))
}

/// Routes each output gradient to its argmax input.
pub fn maxpool_backward(input_shape: Shape, argmax: &[u32], grad_out: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(input_shape);
    let plane_in = input_shape.plane();
    let plane_out = grad_out.shape().plane();
    par::for_each_chunk_mut(dx.data_mut(), plane_in, |i, dst| {
        let gy = &grad_out.data()[i * plane_out..(i + 1) * plane_out];
        let arg = &argmax[i * plane_out..(i + 1) * plane_out];
        for (g, &a) in gy.iter().zip(arg) {
            if a != PAD_ARGMAX {
                dst[a as usize] += g;
            }
        }
    });
    dx
}

/// Average pooling without padding.
pub fn avgpool(x: &Tensor, kernel: usize, stride: usize) -> Result<Tensor> {
    let s = x.shape();
    let g = ConvGeom::new("avgpool", s.c, s.h, s.w, kernel, stride, 0)?;
    let out_shape = Shape::new(s.n, s.c, g.out_h, g.out_w);
    let mut out = Tensor::zeros(out_shape);
    let scale = 1.0 / (kernel * kernel) as Real;
    par::for_each_chunk_mut(out.data_mut(), out_shape.plane(), |i, dst| {
        let src = x.plane(i / s.c, i % s.c);
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let mut acc = 0.0;
                for ky in 0..kernel {
                    let row = (oy * stride + ky) * s.w + ox * stride;
                    acc += src[row..row + kernel].iter().sum::<Real>();
                }
                dst[oy * g.out_w + ox] = acc * scale;
            }
        }
    });
    Ok(out)
}

pub fn avgpool_backward(input_shape: Shape, kernel: usize, stride: usize, grad_out: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(input_shape);
    let go = grad_out.shape();
    let scale = 1.0 / (kernel * kernel) as Real;
    par::for_each_chunk_mut(dx.data_mut(), input_shape.plane(), |i, dst| {
        let gy = &grad_out.data()[i * go.plane()..(i + 1) * go.plane()];
        for oy in 0..go.h {
            for ox in 0..go.w {
                let g = gy[oy * go.w + ox] * scale;
                for ky in 0..kernel {
                    let row = (oy * stride + ky) * input_shape.w + ox * stride;
                    dst[row..row + kernel].iter_mut().for_each(|v| *v += g);
                }
            }
        }
    });
    dx
}
