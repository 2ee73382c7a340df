//! Raw convolution kernels on tensors (no graph, no gradients tracked).
//!
//! Convolutions are lowered to im2col + GEMM. Work is split over the batch
//! with rayon; reductions over the batch (weight and bias gradients) are
//! folded in batch order so results do not depend on the thread count.

use rayon::prelude::*;

use super::{check_finite, Real, Result, Shape, Tensor, TensorError};

/// Stride and zero padding, applied identically on both spatial axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn new(stride: usize, pad: usize) -> Self {
        ConvGeom { stride, pad }
    }

    /// Output extent of a forward convolution, if at least one window fits.
    pub fn conv_out(&self, size: usize, k: usize) -> Option<usize> {
        let padded = size + 2 * self.pad;
        (self.stride > 0 && padded >= k).then(|| (padded - k) / self.stride + 1)
    }

    /// Output extent of a transposed convolution.
    pub fn transpose_out(&self, size: usize, k: usize) -> Option<usize> {
        if self.stride == 0 || size == 0 {
            return None;
        }
        let full = (size - 1) * self.stride + k;
        (full > 2 * self.pad).then(|| full - 2 * self.pad)
    }
}

/// Row-major `c (m x n) = a (m x k) * b (k x n)` where `a`/`b` may be
/// stored transposed. With `accumulate` the product is added to `c`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_transposed: bool,
    b: &[T],
    b_transposed: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand too small");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: the length assertions above cover every index reachable with
    // these dimensions and strides.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

#[derive(Debug, Clone, Copy)]
struct Window {
    channels: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    geom: ConvGeom,
    oh: usize,
    ow: usize,
}

impl Window {
    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.geom.stride == 1 && self.geom.pad == 0
    }

    /// Iterates (row, out offset, source offset) for every in-bounds tap.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let s = self.geom.stride as isize;
        let p = self.geom.pad as isize;
        for c in 0..self.channels {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    for oy in 0..self.oh {
                        let iy = oy as isize * s + ky as isize - p;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let src_row = (c * self.h + iy as usize) * self.w;
                        let dst_row = row * self.cols() + oy * self.ow;
                        for ox in 0..self.ow {
                            let ix = ox as isize * s + kx as isize - p;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            f(dst_row + ox, src_row + ix as usize, row);
                        }
                    }
                }
            }
        }
    }

    fn im2col<T: Real>(&self, src: &[T], col: &mut [T]) {
        col.fill(T::zero());
        self.for_each_tap(|dst, s, _| col[dst] = src[s]);
    }

    fn col2im<T: Real>(&self, col: &[T], dst: &mut [T]) {
        self.for_each_tap(|c, d, _| dst[d] = dst[d] + col[c]);
    }
}

fn conv_window(op: &'static str, input: Shape, kernel: Shape, geom: ConvGeom) -> Result<Window> {
    let [_, c, h, w] = input.0;
    let [_, kc, kh, kw] = kernel.0;
    if kc != c {
        return Err(TensorError::Shape {
            op,
            detail: format!("kernel {kernel} expects {kc} input channels, input {input} has {c}"),
        });
    }
    if geom.stride == 0 {
        return Err(TensorError::Invalid { op, detail: "stride must be positive".into() });
    }
    let (oh, ow) = match (geom.conv_out(h, kh), geom.conv_out(w, kw)) {
        (Some(oh), Some(ow)) => (oh, ow),
        _ => {
            return Err(TensorError::Shape {
                op,
                detail: format!("kernel {kh}x{kw} does not fit input {input} with padding {}", geom.pad),
            })
        }
    };
    Ok(Window { channels: c, h, w, kh, kw, geom, oh, ow })
}

fn check_bias<T: Real>(op: &'static str, bias: Option<&Tensor<T>>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape().numel() != channels {
            return Err(TensorError::Shape {
                op,
                detail: format!("bias {} for {channels} output channels", b.shape()),
            });
        }
    }
    Ok(())
}

/// Cross-correlation of `input` (N,C,H,W) with `kernel` (O,C,kH,kW).
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: ConvGeom,
) -> Result<Tensor<T>> {
    const OP: &str = "conv2d";
    let win = conv_window(OP, input.shape(), kernel.shape(), geom)?;
    let o = kernel.shape().n();
    check_bias(OP, bias, o)?;
    check_finite(OP, "input", input.data())?;
    let n = input.shape().n();
    let out_shape = Shape::new(n, o, win.oh, win.ow);
    let mut out = vec![T::zero(); out_shape.numel()];
    let in_stride = input.shape().numel() / n.max(1);
    let (rows, cols) = (win.rows(), win.cols());
    if out.is_empty() {
        return Tensor::from_vec(out_shape, out);
    }
    out.par_chunks_mut(o * cols).enumerate().for_each(|(b, dst)| {
        let src = &input.data()[b * in_stride..(b + 1) * in_stride];
        if win.is_pointwise() {
            gemm(o, rows, cols, kernel.data(), false, src, false, dst, false);
        } else {
            let mut col = vec![T::zero(); rows * cols];
            win.im2col(src, &mut col);
            gemm(o, rows, cols, kernel.data(), false, &col, false, dst, false);
        }
        if let Some(bias) = bias {
            for (plane, &bv) in dst.chunks_mut(cols).zip(bias.data()) {
                plane.iter_mut().for_each(|v| *v = *v + bv);
            }
        }
    });
    Tensor::from_vec(out_shape, out)
}

/// Gradients of [`conv2d`] given the upstream gradient `grad_out`.
pub struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub kernel: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub(crate) fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    geom: ConvGeom,
    grad_out: &[T],
    want: [bool; 3],
) -> Result<ConvGrads<T>> {
    let win = conv_window("conv2d_backward", input.shape(), kernel.shape(), geom)?;
    let n = input.shape().n();
    let o = kernel.shape().n();
    let (rows, cols) = (win.rows(), win.cols());
    let in_stride = input.shape().numel() / n.max(1);

    let input_grad = want[0].then(|| {
        let mut dx = vec![T::zero(); input.shape().numel()];
        dx.par_chunks_mut(in_stride).enumerate().for_each(|(b, dst)| {
            let dy = &grad_out[b * o * cols..(b + 1) * o * cols];
            if win.is_pointwise() {
                gemm(rows, o, cols, kernel.data(), true, dy, false, dst, false);
            } else {
                let mut dcol = vec![T::zero(); rows * cols];
                gemm(rows, o, cols, kernel.data(), true, dy, false, &mut dcol, false);
                win.col2im(&dcol, dst);
            }
        });
        dx
    });

    let kernel_grad = want[1].then(|| {
        let partials: Vec<Vec<T>> = (0..n)
            .into_par_iter()
            .map(|b| {
                let src = &input.data()[b * in_stride..(b + 1) * in_stride];
                let dy = &grad_out[b * o * cols..(b + 1) * o * cols];
                let mut dw = vec![T::zero(); o * rows];
                if win.is_pointwise() {
                    gemm(o, cols, rows, dy, false, src, true, &mut dw, false);
                } else {
                    let mut col = vec![T::zero(); rows * cols];
                    win.im2col(src, &mut col);
                    gemm(o, cols, rows, dy, false, &col, true, &mut dw, false);
                }
                dw
            })
            .collect();
        fold_in_order(partials, o * rows)
    });

    let bias_grad = want[2].then(|| channel_sums(grad_out, n, o, cols));
    Ok(ConvGrads { input: input_grad, kernel: kernel_grad, bias: bias_grad })
}

fn fold_in_order<T: Real>(partials: Vec<Vec<T>>, len: usize) -> Vec<T> {
    let mut acc = vec![T::zero(); len];
    for p in partials {
        acc.iter_mut().zip(p).for_each(|(a, v)| *a = *a + v);
    }
    acc
}

fn channel_sums<T: Real>(grad: &[T], n: usize, c: usize, plane: usize) -> Vec<T> {
    let mut acc = vec![T::zero(); c];
    for b in 0..n {
        for (ch, a) in acc.iter_mut().enumerate() {
            let start = (b * c + ch) * plane;
            let s: T = grad[start..start + plane].iter().copied().sum();
            *a = *a + s;
        }
    }
    acc
}

fn transpose_window(
    op: &'static str,
    input: Shape,
    kernel: Shape,
    geom: ConvGeom,
) -> Result<(Window, usize)> {
    let [_, ci, h, w] = input.0;
    let [kin, co, kh, kw] = kernel.0;
    if kin != ci {
        return Err(TensorError::Shape {
            op,
            detail: format!("kernel {kernel} expects {kin} input channels, input {input} has {ci}"),
        });
    }
    if geom.stride == 0 {
        return Err(TensorError::Invalid { op, detail: "stride must be positive".into() });
    }
    let (oh, ow) = match (geom.transpose_out(h, kh), geom.transpose_out(w, kw)) {
        (Some(oh), Some(ow)) => (oh, ow),
        _ => {
            return Err(TensorError::Shape {
                op,
                detail: format!("kernel {kh}x{kw} with padding {} leaves no output for {input}", geom.pad),
            })
        }
    };
    // The window describes the forward convolution that maps the output
    // back onto the input grid.
    Ok((Window { channels: co, h: oh, w: ow, kh, kw, geom, oh: h, ow: w }, co))
}

/// Transposed convolution (adjoint of [`conv2d`]): `input` (N,Ci,H,W),
/// `kernel` (Ci,Co,kH,kW), output (N,Co,(H-1)*s-2p+kH, ...).
pub fn conv2d_transpose<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: ConvGeom,
) -> Result<Tensor<T>> {
    const OP: &str = "conv2d_transpose";
    let (win, co) = transpose_window(OP, input.shape(), kernel.shape(), geom)?;
    check_bias(OP, bias, co)?;
    check_finite(OP, "input", input.data())?;
    let n = input.shape().n();
    let ci = input.shape().c();
    let out_shape = Shape::new(n, co, win.h, win.w);
    let out_stride = co * win.h * win.w;
    let (rows, cols) = (win.rows(), win.cols());
    let mut out = vec![T::zero(); out_shape.numel()];
    if out.is_empty() {
        return Tensor::from_vec(out_shape, out);
    }
    out.par_chunks_mut(out_stride).enumerate().for_each(|(b, dst)| {
        let src = &input.data()[b * ci * cols..(b + 1) * ci * cols];
        if win.is_pointwise() {
            gemm(rows, ci, cols, kernel.data(), true, src, false, dst, false);
        } else {
            let mut col = vec![T::zero(); rows * cols];
            gemm(rows, ci, cols, kernel.data(), true, src, false, &mut col, false);
            win.col2im(&col, dst);
        }
        if let Some(bias) = bias {
            let plane = win.h * win.w;
            for (p, &bv) in dst.chunks_mut(plane).zip(bias.data()) {
                p.iter_mut().for_each(|v| *v = *v + bv);
            }
        }
    });
    Tensor::from_vec(out_shape, out)
}

pub(crate) fn conv2d_transpose_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    geom: ConvGeom,
    grad_out: &[T],
    want: [bool; 3],
) -> Result<ConvGrads<T>> {
    let (win, co) = transpose_window("conv2d_transpose_backward", input.shape(), kernel.shape(), geom)?;
    let n = input.shape().n();
    let ci = input.shape().c();
    let (rows, cols) = (win.rows(), win.cols());
    let out_stride = co * win.h * win.w;

    let lowered = |b: usize| -> Vec<T> {
        let dy = &grad_out[b * out_stride..(b + 1) * out_stride];
        if win.is_pointwise() {
            dy.to_vec()
        } else {
            let mut col = vec![T::zero(); rows * cols];
            win.im2col(dy, &mut col);
            col
        }
    };

    let input_grad = want[0].then(|| {
        let mut dx = vec![T::zero(); input.shape().numel()];
        dx.par_chunks_mut(ci * cols).enumerate().for_each(|(b, dst)| {
            let col = lowered(b);
            gemm(ci, rows, cols, kernel.data(), false, &col, false, dst, false);
        });
        dx
    });

    let kernel_grad = want[1].then(|| {
        let partials: Vec<Vec<T>> = (0..n)
            .into_par_iter()
            .map(|b| {
                let col = lowered(b);
                let src = &input.data()[b * ci * cols..(b + 1) * ci * cols];
                let mut dw = vec![T::zero(); ci * rows];
                gemm(ci, cols, rows, src, false, &col, true, &mut dw, false);
                dw
            })
            .collect();
        fold_in_order(partials, ci * rows)
    });

    let bias_grad = want[2].then(|| channel_sums(grad_out, n, co, win.h * win.w));
    Ok(ConvGrads { input: input_grad, kernel: kernel_grad, bias: bias_grad })
}

/// Type-A raster mask for a `kh x kw` kernel: 1 strictly before the centre
/// in raster order, 0 at the centre and after.
pub fn mask_a(kh: usize, kw: usize) -> Vec<bool> {
    let (cy, cx) = (kh / 2, kw / 2);
    (0..kh * kw).map(|i| (i / kw, i % kw) < (cy, cx)).collect()
}

/// Applies the type-A mask to a (O,C,kH,kW) kernel.
pub fn apply_mask_a<T: Real>(kernel: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, _, kh, kw] = kernel.shape().0;
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(TensorError::Invalid {
            op: "masked_conv2d",
            detail: format!("kernel extent {kh}x{kw} must be odd"),
        });
    }
    let mask = mask_a(kh, kw);
    let plane = kh * kw;
    Tensor::from_vec(
        kernel.shape(),
        kernel
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| if mask[i % plane] { v } else { T::zero() })
            .collect(),
    )
}

/// Causal convolution with a type-A masked kernel and "same" padding.
pub fn masked_conv2d<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let masked = apply_mask_a(kernel)?;
    let pad = kernel.shape().h() / 2;
    if kernel.shape().h() != kernel.shape().w() {
        return Err(TensorError::Invalid {
            op: "masked_conv2d",
            detail: format!("kernel must be square, got {}", kernel.shape()),
        });
    }
    conv2d(input, &masked, bias, ConvGeom::new(1, pad))
}
