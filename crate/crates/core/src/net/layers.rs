//! Parameter storage and the building blocks of the transforms.

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::tensor::kernels::ConvGeom;
use crate::tensor::{Graph, Real, Result, Shape, Tensor, Var};

pub const LEAKY_SLOPE: f64 = 0.01;

/// Index of a tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Named parameter tensors. Every parameter exists exactly once; layers
/// refer to it by [`ParamId`], so reusing a layer reuses its storage.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T: Real> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), tensors: Vec::new() }
    }

    pub fn push(&mut self, name: String, tensor: Tensor<T>) -> ParamId {
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names.iter().zip(&self.tensors).enumerate().map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(|t| t.shape().numel()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore { names: self.names.clone(), tensors: self.tensors.iter().map(|t| t.cast()).collect() }
    }

    /// Adds every parameter to `g` as a leaf; `trainable` sets `requires_grad`.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Result<Bound> {
        let vars = self
            .tensors
            .iter()
            .map(|t| g.leaf(t.clone().with_requires_grad(trainable)))
            .collect::<Result<_>>()?;
        Ok(Bound(vars))
    }
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Graph variables of a bound [`ParamStore`], indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound(pub(crate) Vec<Var>);

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

/// Creates parameters with their initial values.
pub(crate) struct Builder<'a, T: Real> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut ChaCha20Rng,
}

impl<T: Real> Builder<'_, T> {
    pub fn uniform(&mut self, name: String, shape: Shape, bound: f64) -> ParamId {
        let t = Tensor::from_fn(shape, |_| T::from_f64(self.rng.random_range(-bound..=bound)));
        self.store.push(name, t)
    }

    pub fn zeros(&mut self, name: String, shape: Shape) -> ParamId {
        self.store.push(name, Tensor::zeros(shape))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub geom: ConvGeom,
}

impl Conv {
    /// `k x k` convolution, "same"-style padding `k / 2`, uniform fan-in init.
    pub(crate) fn new<T: Real>(p: &mut Builder<T>, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> Conv {
        let bound = 1.0 / ((cin * k * k) as f64).sqrt();
        let w = p.uniform(format!("{name}.weight"), Shape::new(cout, cin, k, k), bound);
        let b = p.uniform(format!("{name}.bias"), Shape::new(1, cout, 1, 1), bound);
        Conv { w, b, geom: ConvGeom::new(stride, k / 2) }
    }

    pub(crate) fn zeroed<T: Real>(p: &mut Builder<T>, name: &str, cin: usize, cout: usize, k: usize) -> Conv {
        let w = p.zeros(format!("{name}.weight"), Shape::new(cout, cin, k, k));
        let b = p.zeros(format!("{name}.bias"), Shape::new(1, cout, 1, 1));
        Conv { w, b, geom: ConvGeom::new(1, k / 2) }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, b: &Bound, x: Var) -> Result<Var> {
        g.conv2d(x, b.var(self.w), Some(b.var(self.b)), self.geom)
    }
}

/// Stride-2 transposed convolution with a 4x4 kernel and padding 1: exactly
/// doubles the spatial extent.
#[derive(Debug, Clone, Copy)]
pub struct Up {
    pub w: ParamId,
    pub b: ParamId,
}

impl Up {
    pub(crate) fn new<T: Real>(p: &mut Builder<T>, name: &str, cin: usize, cout: usize) -> Up {
        let bound = 1.0 / ((cout * 16) as f64).sqrt();
        let w = p.uniform(format!("{name}.weight"), Shape::new(cin, cout, 4, 4), bound);
        let b = p.uniform(format!("{name}.bias"), Shape::new(1, cout, 1, 1), bound);
        Up { w, b }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, b: &Bound, x: Var) -> Result<Var> {
        g.conv2d_transpose(x, b.var(self.w), Some(b.var(self.b)), ConvGeom::new(2, 1))
    }
}

pub(crate) fn lrelu<T: Real>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    g.leaky_relu(x, T::from_f64(LEAKY_SLOPE))
}

/// `x + conv(lrelu(conv(x)))` with two 3x3 convolutions.
#[derive(Debug, Clone, Copy)]
pub struct ResBlock {
    c1: Conv,
    c2: Conv,
}

impl ResBlock {
    pub(crate) fn new<T: Real>(p: &mut Builder<T>, name: &str, c: usize) -> ResBlock {
        ResBlock { c1: Conv::new(p, &format!("{name}.conv1"), c, c, 3, 1), c2: Conv::new(p, &format!("{name}.conv2"), c, c, 3, 1) }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, b: &Bound, x: Var) -> Result<Var> {
        let h = self.c1.forward(g, b, x)?;
        let h = lrelu(g, h)?;
        let h = self.c2.forward(g, b, h)?;
        g.add(x, h)
    }
}

/// Simplified attention: `x + trunk(x) * sigmoid(gate(mask(x)))`.
#[derive(Debug, Clone, Copy)]
pub struct Attention {
    trunk: ResBlock,
    mask: ResBlock,
    gate: Conv,
}

impl Attention {
    pub(crate) fn new<T: Real>(p: &mut Builder<T>, name: &str, c: usize) -> Attention {
        Attention {
            trunk: ResBlock::new(p, &format!("{name}.trunk"), c),
            mask: ResBlock::new(p, &format!("{name}.mask"), c),
            gate: Conv::new(p, &format!("{name}.gate"), c, c, 1, 1),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, b: &Bound, x: Var) -> Result<Var> {
        let t = self.trunk.forward(g, b, x)?;
        let m = self.mask.forward(g, b, x)?;
        let m = self.gate.forward(g, b, m)?;
        let m = g.sigmoid(m)?;
        let a = g.mul(t, m)?;
        g.add(x, a)
    }
}

/// `lrelu(x + expand(lrelu(mid(lrelu(reduce(x))))))`: 1x1 down to half
/// width, 3x3, 1x1 back up.
#[derive(Debug, Clone, Copy)]
pub struct BottleneckUnit {
    reduce: Conv,
    mid: Conv,
    expand: Conv,
}

impl BottleneckUnit {
    pub(crate) fn new<T: Real>(p: &mut Builder<T>, name: &str, c: usize) -> BottleneckUnit {
        let h = (c / 2).max(1);
        BottleneckUnit {
            reduce: Conv::new(p, &format!("{name}.conv1"), c, h, 1, 1),
            mid: Conv::new(p, &format!("{name}.conv2"), h, h, 3, 1),
            expand: Conv::new(p, &format!("{name}.conv3"), h, c, 1, 1),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, b: &Bound, x: Var) -> Result<Var> {
        let h = self.reduce.forward(g, b, x)?;
        let h = lrelu(g, h)?;
        let h = self.mid.forward(g, b, h)?;
        let h = lrelu(g, h)?;
        let h = self.expand.forward(g, b, h)?;
        let s = g.add(x, h)?;
        lrelu(g, s)
    }
}

/// Residual attention block with three bottleneck units on the trunk and
/// on the mask branch: `x + trunk(x) * sigmoid(gate(mask(x)))`.
#[derive(Debug, Clone, Copy)]
pub struct AttentionBlock {
    trunk: [BottleneckUnit; 3],
    mask: [BottleneckUnit; 3],
    gate: Conv,
}

impl AttentionBlock {
    pub(crate) fn new<T: Real>(p: &mut Builder<T>, name: &str, c: usize) -> AttentionBlock {
        let trunk = std::array::from_fn(|i| BottleneckUnit::new(p, &format!("{name}.trunk.{i}"), c));
        let mask = std::array::from_fn(|i| BottleneckUnit::new(p, &format!("{name}.mask.{i}"), c));
        AttentionBlock { trunk, mask, gate: Conv::new(p, &format!("{name}.gate"), c, c, 1, 1) }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, b: &Bound, x: Var) -> Result<Var> {
        let mut t = x;
        for u in &self.trunk {
            t = u.forward(g, b, t)?;
        }
        let mut m = x;
        for u in &self.mask {
            m = u.forward(g, b, m)?;
        }
        let m = self.gate.forward(g, b, m)?;
        let m = g.sigmoid(m)?;
        let a = g.mul(t, m)?;
        g.add(x, a)
    }
}

/// Plug-in feature denoiser: one residual attention block followed by a
/// zero-initialised 1x1 projection, so it starts as the zero map.
#[derive(Debug, Clone, Copy)]
pub struct Denoiser {
    att: AttentionBlock,
    out: Conv,
}

impl Denoiser {
    pub(crate) fn new<T: Real>(p: &mut Builder<T>, name: &str, c: usize) -> Denoiser {
        Denoiser { att: AttentionBlock::new(p, &format!("{name}.att"), c), out: Conv::zeroed(p, &format!("{name}.out"), c, c, 1) }
    }

    /// The correction `d(f)`; the caller adds it to `f`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, b: &Bound, f: Var) -> Result<Var> {
        let h = self.att.forward(g, b, f)?;
        self.out.forward(g, b, h)
    }

    pub fn output_params(&self) -> [ParamId; 2] {
        [self.out.w, self.out.b]
    }
}

/// Stride-2 3x3 convolution, leaky ReLU, residual block.
#[derive(Debug, Clone, Copy)]
pub struct DownStage {
    conv: Conv,
    res: ResBlock,
}

impl DownStage {
    pub(crate) fn new<T: Real>(p: &mut Builder<T>, name: &str, cin: usize, cout: usize) -> DownStage {
        DownStage { conv: Conv::new(p, &format!("{name}.down"), cin, cout, 3, 2), res: ResBlock::new(p, &format!("{name}.res"), cout) }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, b: &Bound, x: Var) -> Result<Var> {
        let h = self.conv.forward(g, b, x)?;
        let h = lrelu(g, h)?;
        self.res.forward(g, b, h)
    }
}

/// Transposed convolution (x2), leaky ReLU, residual block.
#[derive(Debug, Clone, Copy)]
pub struct UpStage {
    up: Up,
    res: ResBlock,
}

impl UpStage {
    pub(crate) fn new<T: Real>(p: &mut Builder<T>, name: &str, cin: usize, cout: usize) -> UpStage {
        UpStage { up: Up::new(p, &format!("{name}.up"), cin, cout), res: ResBlock::new(p, &format!("{name}.res"), cout) }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, b: &Bound, x: Var) -> Result<Var> {
        let h = self.up.forward(g, b, x)?;
        let h = lrelu(g, h)?;
        self.res.forward(g, b, h)
    }
}
