use super::kernels::{self, ConvGeom};
use super::{check_finite, Real, Result, Shape, Tensor, TensorError};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable operation whose forward pass is computed by the caller.
///
/// `backward` returns one gradient per input; entries for inputs with
/// `needs[i] == false` may be `None`.
pub trait CustomOp<T: Real> {
    fn name(&self) -> &'static str;

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_out: &[T],
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>>;
}

enum Op<T: Real> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Affine(Var, T),
    LeakyRelu(Var, T),
    Sigmoid(Var),
    Abs(Var),
    Softplus(Var),
    Ln(Var),
    Powf(Var, T),
    Clamp(Var, T, T),
    LowerBound(Var, T),
    Sum(Var),
    Mean(Var),
    MeanPlanes(Var),
    Conv { input: Var, kernel: Var, bias: Option<Var>, geom: ConvGeom },
    ConvTranspose { input: Var, kernel: Var, bias: Option<Var>, geom: ConvGeom },
    MaskA(Var),
    Concat(Vec<Var>),
    Narrow { input: Var, start: usize },
    Crop(Var),
    Reshape(Var),
    AvgPool2(Var),
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp<T>> },
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Tape of operations recorded in execution order.
///
/// Nodes are appended as ops run, so every node's inputs precede it and
/// [`Graph::backward`] is a single reverse sweep. Gradients are stored on
/// leaf tensors that require them.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, detail: String) -> TensorError {
    TensorError::Shape { op, detail }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a leaf. Its `requires_grad` flag decides whether it receives a
    /// gradient.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Result<Var> {
        check_finite("leaf", "value", tensor.data())?;
        let mut tensor = tensor;
        tensor.clear_grad();
        Ok(self.push(tensor, Op::Leaf))
    }

    /// Adds a leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor<T>) -> Result<Var> {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn scalar(&mut self, value: T) -> Result<Var> {
        self.constant(Tensor::scalar(value))
    }

    /// Copies a value into a new constant leaf, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone().with_requires_grad(false);
        self.push(t, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, name: &'static str, shape: Shape, data: Vec<T>, inputs: &[Var], op: Op<T>) -> Result<Var> {
        check_finite(name, "output", &data)?;
        let requires = inputs.iter().any(|&v| self.requires_grad(v));
        let t = Tensor::from_vec(shape, data)?.with_requires_grad(requires);
        Ok(self.push(t, op))
    }

    fn broadcast_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Shape> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb || sb.is_scalar() {
            Ok(sa)
        } else if sa.is_scalar() {
            Ok(sb)
        } else {
            Err(shape_err(op, format!("{sa} vs {sb} (only scalar broadcasting)")))
        }
    }

    fn zip(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let shape = self.broadcast_shape(name, a, b)?;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let data = (0..shape.numel())
            .map(|i| f(da[if da.len() == 1 { 0 } else { i }], db[if db.len() == 1 { 0 } else { i }]))
            .collect();
        self.record(name, shape, data, &[a, b], op)
    }

    fn map(&mut self, name: &'static str, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let shape = self.shape(x);
        let data = self.value(x).data().iter().map(|&v| f(v)).collect();
        self.record(name, shape, data, &[x], op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// `scale * x + shift` with constant coefficients.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Result<Var> {
        self.map("affine", x, |v| scale * v + shift, Op::Affine(x, scale))
    }

    pub fn scale(&mut self, x: Var, scale: T) -> Result<Var> {
        self.affine(x, scale, T::zero())
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Result<Var> {
        self.map("leaky_relu", x, |v| if v > T::zero() { v } else { v * slope }, Op::LeakyRelu(x, slope))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map("sigmoid", x, sigmoid, Op::Sigmoid(x))
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.map("abs", x, |v| v.abs(), Op::Abs(x))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.map("softplus", x, softplus, Op::Softplus(x))
    }

    pub fn ln(&mut self, x: Var) -> Result<Var> {
        self.map("ln", x, |v| v.ln(), Op::Ln(x))
    }

    pub fn powf(&mut self, x: Var, p: T) -> Result<Var> {
        self.map("powf", x, |v| v.powf(p), Op::Powf(x, p))
    }

    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Result<Var> {
        if lo > hi {
            return Err(TensorError::Invalid { op: "clamp", detail: format!("lo {lo} > hi {hi}") });
        }
        self.map("clamp", x, |v| v.max(lo).min(hi), Op::Clamp(x, lo, hi))
    }

    /// `max(x, bound)`; the gradient still flows below the bound when it
    /// points upward, so values can recover from the floor.
    pub fn lower_bound(&mut self, x: Var, bound: T) -> Result<Var> {
        self.map("lower_bound", x, |v| v.max(bound), Op::LowerBound(x, bound))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum();
        self.record("sum", Shape::SCALAR, vec![s], &[x], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.shape(x).numel();
        if n == 0 {
            return Err(TensorError::Invalid { op: "mean", detail: "empty tensor".into() });
        }
        let s: T = self.value(x).data().iter().copied().sum();
        self.record("mean", Shape::SCALAR, vec![s / T::from_f64(n as f64)], &[x], Op::Mean(x))
    }

    /// Mean over each (h, w) plane: (N,C,H,W) -> (N,C,1,1).
    pub fn mean_planes(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let plane = s.plane();
        if plane == 0 {
            return Err(TensorError::Invalid { op: "mean_planes", detail: "empty plane".into() });
        }
        let inv = T::from_f64(1.0 / plane as f64);
        let data = self.value(x).data().chunks(plane).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        self.record("mean_planes", Shape::new(s.n(), s.c(), 1, 1), data, &[x], Op::MeanPlanes(x))
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let out = kernels::conv2d(self.value(input), self.value(kernel), bias.map(|b| self.value(b)), geom)?;
        let mut inputs = vec![input, kernel];
        inputs.extend(bias);
        let (shape, data) = (out.shape(), out.into_data());
        self.record("conv2d", shape, data, &inputs, Op::Conv { input, kernel, bias, geom })
    }

    pub fn conv2d_transpose(&mut self, input: Var, kernel: Var, bias: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let out =
            kernels::conv2d_transpose(self.value(input), self.value(kernel), bias.map(|b| self.value(b)), geom)?;
        let mut inputs = vec![input, kernel];
        inputs.extend(bias);
        let (shape, data) = (out.shape(), out.into_data());
        self.record("conv2d_transpose", shape, data, &inputs, Op::ConvTranspose { input, kernel, bias, geom })
    }

    /// Zeroes the centre tap and every raster-later tap of a kernel.
    pub fn mask_a(&mut self, kernel: Var) -> Result<Var> {
        let masked = kernels::apply_mask_a(self.value(kernel))?;
        let (shape, data) = (masked.shape(), masked.into_data());
        self.record("mask_a", shape, data, &[kernel], Op::MaskA(kernel))
    }

    /// Causal "same" convolution whose output at p sees only inputs strictly
    /// before p in raster order.
    pub fn masked_conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>) -> Result<Var> {
        let ks = self.shape(kernel);
        if ks.h() != ks.w() {
            return Err(TensorError::Invalid {
                op: "masked_conv2d",
                detail: format!("kernel must be square, got {ks}"),
            });
        }
        let masked = self.mask_a(kernel)?;
        self.conv2d(input, masked, bias, ConvGeom::new(1, ks.h() / 2))
    }

    /// Concatenates along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| TensorError::Invalid { op: "concat", detail: "no inputs".into() })?;
        let s0 = self.shape(first);
        let mut channels = 0;
        for &p in parts {
            let s = self.shape(p);
            if (s.n(), s.h(), s.w()) != (s0.n(), s0.h(), s0.w()) {
                return Err(shape_err("concat", format!("{s} vs {s0}")));
            }
            channels += s.c();
        }
        let plane = s0.plane();
        let mut data = Vec::with_capacity(s0.n() * channels * plane);
        for b in 0..s0.n() {
            for &p in parts {
                let t = self.value(p);
                let len = t.shape().c() * plane;
                data.extend_from_slice(&t.data()[b * len..(b + 1) * len]);
            }
        }
        let shape = Shape::new(s0.n(), channels, s0.h(), s0.w());
        self.record("concat", shape, data, parts, Op::Concat(parts.to_vec()))
    }

    /// Channels `[start, start + len)`.
    pub fn narrow(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let out = self.value(input).narrow_channels(start, len)?;
        let (shape, data) = (out.shape(), out.into_data());
        self.record("narrow", shape, data, &[input], Op::Narrow { input, start })
    }

    /// Top-left `h x w` window of every plane.
    pub fn crop(&mut self, input: Var, h: usize, w: usize) -> Result<Var> {
        if (self.shape(input).h(), self.shape(input).w()) == (h, w) {
            return Ok(input);
        }
        let out = self.value(input).crop(h, w)?;
        let (shape, data) = (out.shape(), out.into_data());
        self.record("crop", shape, data, &[input], Op::Crop(input))
    }

    pub fn reshape(&mut self, input: Var, shape: Shape) -> Result<Var> {
        if shape.numel() != self.shape(input).numel() {
            return Err(shape_err("reshape", format!("{} -> {shape}", self.shape(input))));
        }
        let data = self.value(input).data().to_vec();
        self.record("reshape", shape, data, &[input], Op::Reshape(input))
    }

    /// 2x2 average pooling with stride 2; a trailing odd row/column is dropped.
    pub fn avg_pool2(&mut self, input: Var) -> Result<Var> {
        let s = self.shape(input);
        let (oh, ow) = (s.h() / 2, s.w() / 2);
        if oh == 0 || ow == 0 {
            return Err(shape_err("avg_pool2", format!("input {s} too small")));
        }
        let src = self.value(input).data();
        let quarter = T::from_f64(0.25);
        let mut data = Vec::with_capacity(s.n() * s.c() * oh * ow);
        for p in 0..s.n() * s.c() {
            let base = p * s.plane();
            for y in 0..oh {
                for x in 0..ow {
                    let i = base + 2 * y * s.w() + 2 * x;
                    data.push((src[i] + src[i + 1] + src[i + s.w()] + src[i + s.w() + 1]) * quarter);
                }
            }
        }
        let shape = Shape::new(s.n(), s.c(), oh, ow);
        self.record("avg_pool2", shape, data, &[input], Op::AvgPool2(input))
    }

    /// Records an op whose forward value was computed by the caller.
    pub fn custom(&mut self, op: Box<dyn CustomOp<T>>, inputs: &[Var], output: Tensor<T>) -> Result<Var> {
        let name = op.name();
        let (shape, data) = (output.shape(), output.into_data());
        self.record(name, shape, data, inputs, Op::Custom { inputs: inputs.to_vec(), op })
    }

    /// Reverse sweep from a scalar `loss`. Every leaf with `requires_grad`
    /// ends up holding a gradient; leaves the loss does not depend on get
    /// zeros.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let ls = self.shape(loss);
        if !ls.is_scalar() {
            return Err(TensorError::NotScalar(ls));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut leaf_grads = Vec::new();
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.value.requires_grad() {
                continue;
            }
            if let Op::Leaf = node.op {
                leaf_grads.push((id, g));
                continue;
            }
            for (input, contribution) in self.input_grads(id, &g)? {
                if !self.nodes[input.0].value.requires_grad() {
                    continue;
                }
                accumulate(&mut grads[input.0], contribution, self.nodes[input.0].value.shape().numel());
            }
        }
        for node in &mut self.nodes {
            if matches!(node.op, Op::Leaf) && node.value.requires_grad() {
                let n = node.value.shape().numel();
                node.value.set_grad(vec![T::zero(); n])?;
            }
        }
        for (id, g) in leaf_grads {
            self.nodes[id].value.set_grad(g)?;
        }
        Ok(())
    }

    fn input_grads(&self, id: usize, g: &[T]) -> Result<Vec<(Var, Vec<T>)>> {
        let node = &self.nodes[id];
        let out = &node.value;
        let val = |v: Var| self.value(v).data();
        let needs = |v: Var| self.requires_grad(v);
        let mut res = Vec::new();
        match &node.op {
            Op::Leaf => {}
            &Op::Add(a, b) => {
                res.push((a, g.to_vec()));
                res.push((b, g.to_vec()));
            }
            &Op::Sub(a, b) => {
                res.push((a, g.to_vec()));
                res.push((b, g.iter().map(|&v| -v).collect()));
            }
            &Op::Mul(a, b) => {
                let (da, db) = (val(a), val(b));
                if needs(a) {
                    res.push((a, g.iter().enumerate().map(|(i, &gi)| gi * bc(db, i)).collect()));
                }
                if needs(b) {
                    res.push((b, g.iter().enumerate().map(|(i, &gi)| gi * bc(da, i)).collect()));
                }
            }
            &Op::Div(a, b) => {
                let (da, db) = (val(a), val(b));
                if needs(a) {
                    res.push((a, g.iter().enumerate().map(|(i, &gi)| gi / bc(db, i)).collect()));
                }
                if needs(b) {
                    res.push((
                        b,
                        g.iter()
                            .enumerate()
                            .map(|(i, &gi)| {
                                let d = bc(db, i);
                                -gi * bc(da, i) / (d * d)
                            })
                            .collect(),
                    ));
                }
            }
            &Op::Affine(x, scale) => res.push((x, g.iter().map(|&v| v * scale).collect())),
            &Op::LeakyRelu(x, slope) => res.push((
                x,
                g.iter().zip(val(x)).map(|(&gi, &v)| if v > T::zero() { gi } else { gi * slope }).collect(),
            )),
            &Op::Sigmoid(x) => {
                res.push((x, g.iter().zip(out.data()).map(|(&gi, &y)| gi * y * (T::one() - y)).collect()))
            }
            &Op::Abs(x) => res.push((
                x,
                g.iter()
                    .zip(val(x))
                    .map(|(&gi, &v)| {
                        if v > T::zero() {
                            gi
                        } else if v < T::zero() {
                            -gi
                        } else {
                            T::zero()
                        }
                    })
                    .collect(),
            )),
            &Op::Softplus(x) => res.push((x, g.iter().zip(val(x)).map(|(&gi, &v)| gi * sigmoid(v)).collect())),
            &Op::Ln(x) => res.push((x, g.iter().zip(val(x)).map(|(&gi, &v)| gi / v).collect())),
            &Op::Powf(x, p) => res.push((
                x,
                g.iter().zip(val(x)).map(|(&gi, &v)| gi * p * v.powf(p - T::one())).collect(),
            )),
            &Op::Clamp(x, lo, hi) => res.push((
                x,
                g.iter().zip(val(x)).map(|(&gi, &v)| if v >= lo && v <= hi { gi } else { T::zero() }).collect(),
            )),
            &Op::LowerBound(x, bound) => res.push((
                x,
                g.iter()
                    .zip(val(x))
                    .map(|(&gi, &v)| if v >= bound || gi < T::zero() { gi } else { T::zero() })
                    .collect(),
            )),
            &Op::Sum(x) => res.push((x, vec![g[0]; self.shape(x).numel()])),
            &Op::Mean(x) => {
                let n = self.shape(x).numel();
                res.push((x, vec![g[0] / T::from_f64(n as f64); n]));
            }
            &Op::MeanPlanes(x) => {
                let plane = self.shape(x).plane();
                let inv = T::from_f64(1.0 / plane as f64);
                let mut d = Vec::with_capacity(self.shape(x).numel());
                for &gi in g {
                    d.extend(std::iter::repeat_n(gi * inv, plane));
                }
                res.push((x, d));
            }
            &Op::Conv { input, kernel, bias, geom } => {
                let want = [needs(input), needs(kernel), bias.is_some_and(needs)];
                let gr = kernels::conv2d_backward(self.value(input), self.value(kernel), geom, g, want)?;
                push_conv_grads(&mut res, input, kernel, bias, gr);
            }
            &Op::ConvTranspose { input, kernel, bias, geom } => {
                let want = [needs(input), needs(kernel), bias.is_some_and(needs)];
                let gr = kernels::conv2d_transpose_backward(self.value(input), self.value(kernel), geom, g, want)?;
                push_conv_grads(&mut res, input, kernel, bias, gr);
            }
            &Op::MaskA(k) => {
                let ks = self.shape(k);
                let mask = kernels::mask_a(ks.h(), ks.w());
                let plane = ks.plane();
                res.push((k, g.iter().enumerate().map(|(i, &gi)| if mask[i % plane] { gi } else { T::zero() }).collect()));
            }
            Op::Concat(parts) => {
                let plane = out.shape().plane();
                let total = out.shape().c() * plane;
                let mut offset = 0;
                for &p in parts {
                    let len = self.shape(p).c() * plane;
                    if needs(p) {
                        let mut d = Vec::with_capacity(self.shape(p).numel());
                        for b in 0..out.shape().n() {
                            d.extend_from_slice(&g[b * total + offset..b * total + offset + len]);
                        }
                        res.push((p, d));
                    }
                    offset += len;
                }
            }
            &Op::Narrow { input, start } => {
                let s = self.shape(input);
                let plane = s.plane();
                let len = out.shape().c() * plane;
                let mut d = vec![T::zero(); s.numel()];
                for b in 0..s.n() {
                    let dst = (b * s.c() + start) * plane;
                    d[dst..dst + len].copy_from_slice(&g[b * len..(b + 1) * len]);
                }
                res.push((input, d));
            }
            &Op::Crop(input) => {
                let s = self.shape(input);
                let (h, w) = (out.shape().h(), out.shape().w());
                let mut d = vec![T::zero(); s.numel()];
                for p in 0..s.n() * s.c() {
                    for y in 0..h {
                        let dst = (p * s.h() + y) * s.w();
                        let src = (p * h + y) * w;
                        d[dst..dst + w].copy_from_slice(&g[src..src + w]);
                    }
                }
                res.push((input, d));
            }
            &Op::Reshape(input) => res.push((input, g.to_vec())),
            &Op::AvgPool2(input) => {
                let s = self.shape(input);
                let (oh, ow) = (out.shape().h(), out.shape().w());
                let quarter = T::from_f64(0.25);
                let mut d = vec![T::zero(); s.numel()];
                for p in 0..s.n() * s.c() {
                    let base = p * s.plane();
                    for y in 0..oh {
                        for x in 0..ow {
                            let gi = g[(p * oh + y) * ow + x] * quarter;
                            let i = base + 2 * y * s.w() + 2 * x;
                            for j in [i, i + 1, i + s.w(), i + s.w() + 1] {
                                d[j] = gi;
                            }
                        }
                    }
                }
                res.push((input, d));
            }
            Op::Custom { inputs, op } => {
                let values: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
                let flags: Vec<bool> = inputs.iter().map(|&v| needs(v)).collect();
                let grads = op.backward(&values, out, g, &flags);
                for ((&v, gr), need) in inputs.iter().zip(grads).zip(flags) {
                    if let (Some(gr), true) = (gr, need) {
                        if gr.len() != self.shape(v).numel() {
                            return Err(shape_err(op.name(), format!("gradient length {} for {}", gr.len(), self.shape(v))));
                        }
                        res.push((v, gr));
                    }
                }
            }
        }
        Ok(res)
    }
}

fn push_conv_grads<T: Real>(
    res: &mut Vec<(Var, Vec<T>)>,
    input: Var,
    kernel: Var,
    bias: Option<Var>,
    gr: kernels::ConvGrads<T>,
) {
    if let Some(d) = gr.input {
        res.push((input, d));
    }
    if let Some(d) = gr.kernel {
        res.push((kernel, d));
    }
    if let (Some(b), Some(d)) = (bias, gr.bias) {
        res.push((b, d));
    }
}

#[inline]
fn bc<T: Copy>(data: &[T], i: usize) -> T {
    if data.len() == 1 {
        data[0]
    } else {
        data[i]
    }
}

/// Adds `contribution` into `slot`, summing it down when the target is a
/// broadcast scalar.
fn accumulate<T: Real>(slot: &mut Option<Vec<T>>, contribution: Vec<T>, target_len: usize) {
    let contribution = if target_len == 1 && contribution.len() != 1 {
        vec![contribution.iter().copied().sum()]
    } else {
        contribution
    };
    match slot {
        Some(acc) => acc.iter_mut().zip(contribution).for_each(|(a, v)| *a = *a + v),
        None => *slot = Some(contribution),
    }
}

/// Logistic function, stable for large `|v|`.
pub fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^v)` without overflow.
pub fn softplus<T: Real>(v: T) -> T {
    v.max(T::zero()) + (-v.abs()).exp().ln_1p()
}
