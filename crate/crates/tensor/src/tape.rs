//! Operation tape and the reverse sweep.

use crate::kernels;
use crate::{ParamId, ParamSet, Real, Result, Shape, Tensor, TensorError};

/// Probabilities are clamped to `[CLAMP, 1 − CLAMP]` inside logarithms.
const CLAMP: Real = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    TransposedConv2d {
        x: Var,
        w: Var,
        stride: usize,
    },
    MaxPool {
        x: Var,
        argmax: Vec<u32>,
    },
    AvgPool {
        x: Var,
        kernel: usize,
        stride: usize,
    },
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    Add(Var, Var),
    Mul(Var, Var),
    MulChannels {
        x: Var,
        gate: Var,
    },
    Scale(Var, Real),
    Concat(Vec<Var>),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Sum(Var),
    Mean(Var),
    SegmentMean {
        x: Var,
        labels: Vec<Vec<u32>>,
        counts: Vec<Vec<usize>>,
    },
    WeightedBce {
        p: Var,
        target: Tensor,
        pos_weight: Vec<Real>,
        neg_weight: Vec<Real>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::Conv2d { .. } => "conv2d",
            Op::TransposedConv2d { .. } => "transposed_conv2d",
            Op::MaxPool { .. } => "maxpool",
            Op::AvgPool { .. } => "avgpool",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Softmax(_) => "softmax",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::MulChannels { .. } => "mul_channels",
            Op::Scale(..) => "scale",
            Op::Concat(_) => "concat_channels",
            Op::Linear { .. } => "fully_connected",
            Op::Sum(_) => "reduce_sum",
            Op::Mean(_) => "reduce_mean",
            Op::SegmentMean { .. } => "segment_mean",
            Op::WeightedBce { .. } => "weighted_bce",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Param(_) => vec![],
            Op::Conv2d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b.iter().copied());
                v
            }
            Op::TransposedConv2d { x, w, .. } => vec![*x, *w],
            Op::MaxPool { x, .. } | Op::AvgPool { x, .. } => vec![*x],
            Op::Relu(x) | Op::Sigmoid(x) | Op::Softmax(x) | Op::Scale(x, _) => vec![*x],
            Op::Sum(x) | Op::Mean(x) => vec![*x],
            Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::MulChannels { x, gate } => vec![*x, *gate],
            Op::Concat(xs) => xs.clone(),
            Op::Linear { x, w, b } => vec![*x, *w, *b],
            Op::SegmentMean { x, .. } => vec![*x],
            Op::WeightedBce { p, .. } => vec![*p],
            Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation for a later reverse sweep.
///
/// Parameters are copied onto the tape by [`Tape::param`]; using the same
/// [`Var`] several times (for example a recurrent weight) shares the weight
/// and accumulates its gradient across every use.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    track_params: bool,
    check_finite: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// A tape that tracks parameter gradients.
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            track_params: true,
            check_finite: cfg!(debug_assertions),
        }
    }

    /// A tape for inference: parameters do not require gradients.
    pub fn inference() -> Self {
        Tape {
            track_params: false,
            ..Self::new()
        }
    }

    /// Enables or disables the non-finite check run after every operation.
    pub fn check_finite(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records the operation names in execution order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.iter().map(|n| n.op.name()).collect()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if self.check_finite && !value.is_finite() {
            return Err(TensorError::NonFinite { op: op.name() });
        }
        let requires_grad = match op {
            Op::Leaf => false,
            Op::Param(_) => self.track_params,
            _ => op.inputs().iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a constant input.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an input whose gradient is wanted.
    pub fn input_with_grad(&mut self, value: Tensor) -> Var {
        let v = self.input(value);
        self.nodes[v.0].requires_grad = true;
        v
    }

    /// Copies a parameter onto the tape.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        let requires_grad = self.track_params;
        self.nodes.push(Node {
            value: params.value(id).clone(),
            op: Op::Param(id),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let y = kernels::conv2d(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            stride,
            pad,
        )?;
        self.push(y, Op::Conv2d { x, w, b, stride, pad })
    }

    /// Transposed convolution without padding; `w` is `C_in × C_out × k × k`.
    pub fn transposed_conv2d(&mut self, x: Var, w: Var, stride: usize) -> Result<Var> {
        let y = kernels::transposed_conv2d(self.value(x), self.value(w), stride, 0)?;
        self.push(y, Op::TransposedConv2d { x, w, stride })
    }

    /// Max pooling. Stride-1 pooling pads symmetrically with `(kernel − 1)/2`
    /// zeros so the spatial size is preserved; other strides do not pad.
    pub fn maxpool(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let pad = if stride == 1 { (kernel.saturating_sub(1)) / 2 } else { 0 };
        let (y, argmax) = kernels::maxpool(self.value(x), kernel, stride, pad)?;
        self.push(y, Op::MaxPool { x, argmax })
    }

    pub fn avgpool(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let y = kernels::avgpool(self.value(x), kernel, stride)?;
        self.push(y, Op::AvgPool { x, kernel, stride })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let y = self.value(x).map(|v| v.max(0.0));
        self.push(y, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let y = self.value(x).map(sigmoid);
        self.push(y, Op::Sigmoid(x))
    }

    /// Softmax over a length-2 logit vector per sample (`N × 2 × 1 × 1`).
    pub fn softmax2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.c != 2 || s.h != 1 || s.w != 1 {
            return Err(TensorError::shape("softmax2", format!("expected N×2×1×1, got {s}")));
        }
        let y = softmax_rows(self.value(x));
        self.push(y, Op::Softmax(x))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Shape> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(TensorError::shape(op, format!("{sa} vs {sb}")));
        }
        Ok(sa)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.same_shape("add", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.push(Tensor::from_vec(s, data)?, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.same_shape("elementwise_mul", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.push(Tensor::from_vec(s, data)?, Op::Mul(a, b))
    }

    /// Multiplies every channel of `x` (`N×C×H×W`) by a single-channel
    /// `gate` (`N×1×H×W`).
    pub fn mul_channels(&mut self, x: Var, gate: Var) -> Result<Var> {
        let (sx, sg) = (self.shape(x), self.shape(gate));
        if sg != Shape::new(sx.n, 1, sx.h, sx.w) {
            return Err(TensorError::shape(
                "mul_channels",
                format!("gate {sg} does not match input {sx} spatially"),
            ));
        }
        let (xv, gv) = (self.value(x), self.value(gate));
        let y = Tensor::from_fn(sx, |n, c, h, w| xv.at(n, c, h, w) * gv.at(n, 0, h, w));
        self.push(y, Op::MulChannels { x, gate })
    }

    pub fn scale(&mut self, x: Var, factor: Real) -> Result<Var> {
        let y = self.value(x).map(|v| v * factor);
        self.push(y, Op::Scale(x, factor))
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| TensorError::arg("concat_channels", "no inputs"))?;
        let s0 = self.shape(first);
        let mut channels = 0;
        for &v in xs {
            let s = self.shape(v);
            if (s.n, s.h, s.w) != (s0.n, s0.h, s0.w) {
                return Err(TensorError::shape(
                    "concat_channels",
                    format!("{s} does not match {s0} outside the channel axis"),
                ));
            }
            channels += s.c;
        }
        let out_shape = Shape::new(s0.n, channels, s0.h, s0.w);
        let mut data = Vec::with_capacity(out_shape.numel());
        for n in 0..s0.n {
            for &v in xs {
                data.extend_from_slice(self.value(v).item(n));
            }
        }
        self.push(Tensor::from_vec(out_shape, data)?, Op::Concat(xs.to_vec()))
    }

    /// Fully connected layer over each flattened batch item. `w` is
    /// `out × features × 1 × 1`, `b` is `1 × out × 1 × 1`.
    pub fn fully_connected(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        let features = sx.item();
        if sw.c * sw.h * sw.w != features || sb != Shape::new(1, sw.n, 1, 1) {
            return Err(TensorError::shape(
                "fully_connected",
                format!("input {sx} ({features} features), weight {sw}, bias {sb}"),
            ));
        }
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let out = Shape::new(sx.n, sw.n, 1, 1);
        let mut y = Tensor::zeros(out);
        for n in 0..sx.n {
            let xi = xv.item(n);
            for o in 0..sw.n {
                let wo = &wv.data()[o * features..(o + 1) * features];
                let dot: Real = xi.iter().zip(wo).map(|(a, b)| a * b).sum();
                y.data_mut()[n * sw.n + o] = dot + bv.data()[o];
            }
        }
        self.push(y, Op::Linear { x, w, b })
    }

    pub fn reduce_sum(&mut self, x: Var) -> Result<Var> {
        let y = Tensor::scalar(self.value(x).sum());
        self.push(y, Op::Sum(x))
    }

    pub fn reduce_mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.is_empty() {
            return Err(TensorError::arg("reduce_mean", "empty tensor"));
        }
        let y = Tensor::scalar(v.sum() / v.len() as Real);
        self.push(y, Op::Mean(x))
    }

    /// Replaces every value of a single-channel map by the mean over its
    /// segment. `labels[n]` holds one segment label per pixel of item `n`.
    pub fn segment_mean(&mut self, x: Var, labels: &[Vec<u32>]) -> Result<Var> {
        let s = self.shape(x);
        if s.c != 1 || labels.len() != s.n || labels.iter().any(|l| l.len() != s.plane()) {
            return Err(TensorError::shape(
                "segment_mean",
                format!("expected {} label maps of {} pixels for {s}", s.n, s.plane()),
            ));
        }
        let xv = self.value(x);
        let mut y = Tensor::zeros(s);
        let mut counts = Vec::with_capacity(s.n);
        for (n, lab) in labels.iter().enumerate() {
            let k = lab.iter().copied().max().map_or(0, |m| m as usize + 1);
            let mut sum = vec![0.0; k];
            let mut cnt = vec![0usize; k];
            for (&l, &v) in lab.iter().zip(xv.item(n)) {
                sum[l as usize] += v;
                cnt[l as usize] += 1;
            }
            let p = s.plane();
            for (i, &l) in lab.iter().enumerate() {
                y.data_mut()[n * p + i] = sum[l as usize] / cnt[l as usize] as Real;
            }
            counts.push(cnt);
        }
        self.push(
            y,
            Op::SegmentMean {
                x,
                labels: labels.to_vec(),
                counts,
            },
        )
    }

    /// Weighted binary cross-entropy, summed over pixels and averaged over
    /// the batch:
    /// `mean_n −Σᵢ [w⁺ₙ·tᵢ·log pᵢ + w⁻ₙ·(1 − tᵢ)·log(1 − pᵢ)]`.
    pub fn weighted_bce(
        &mut self,
        p: Var,
        target: &Tensor,
        pos_weight: &[Real],
        neg_weight: &[Real],
    ) -> Result<Var> {
        let s = self.shape(p);
        if target.shape() != s || pos_weight.len() != s.n || neg_weight.len() != s.n {
            return Err(TensorError::shape(
                "weighted_bce",
                format!(
                    "prediction {s}, target {}, {} / {} per-item weights",
                    target.shape(),
                    pos_weight.len(),
                    neg_weight.len()
                ),
            ));
        }
        let pv = self.value(p);
        let mut total = 0.0;
        for n in 0..s.n {
            let mut item = 0.0;
            for (&pi, &ti) in pv.item(n).iter().zip(target.item(n)) {
                let pc = pi.clamp(CLAMP, 1.0 - CLAMP);
                item -= pos_weight[n] * ti * pc.ln() + neg_weight[n] * (1.0 - ti) * (1.0 - pc).ln();
            }
            total += item;
        }
        let y = Tensor::scalar(total / s.n as Real);
        self.push(
            y,
            Op::WeightedBce {
                p,
                target: target.clone(),
                pos_weight: pos_weight.to_vec(),
                neg_weight: neg_weight.to_vec(),
            },
        )
    }

    /// Mean over the batch of `−log softmax(logits)[label]` for `N × K × 1 × 1`
    /// logits.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits);
        if s.h != 1 || s.w != 1 || labels.len() != s.n {
            return Err(TensorError::shape(
                "softmax_cross_entropy",
                format!("logits {s} with {} labels", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= s.c) {
            return Err(TensorError::arg(
                "softmax_cross_entropy",
                format!("label {bad} out of range for {} classes", s.c),
            ));
        }
        let z = self.value(logits);
        if !z.is_finite() {
            return Err(TensorError::NonFinite {
                op: "softmax_cross_entropy",
            });
        }
        let mut total = 0.0;
        for (n, &l) in labels.iter().enumerate() {
            let row = z.item(n);
            let m = row.iter().copied().fold(Real::NEG_INFINITY, Real::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<Real>().ln();
            total += lse - row[l];
        }
        let y = Tensor::scalar(total / s.n as Real);
        self.push(
            y,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
        )
    }

    /// Reverse sweep from a scalar `loss`. Nodes are visited in exact reverse
    /// execution order.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let ls = self.shape(loss);
        if ls.numel() != 1 {
            return Err(TensorError::NotScalar(ls));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(ls));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let (before, rest) = grads.split_at_mut(i);
            let Some(g) = rest[0].as_ref() else {
                continue;
            };
            self.backward_node(node, g, before)?;
        }
        Ok(Gradients { grads })
    }

    /// Runs [`Tape::backward`] and adds parameter gradients into `params`.
    /// Parameters not reached from `loss` receive nothing.
    pub fn backward_into(&self, loss: Var, params: &mut ParamSet) -> Result<Gradients> {
        let grads = self.backward(loss)?;
        for (node, g) in self.nodes.iter().zip(&grads.grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                params.get_mut(*id).grad.add_assign(g);
            }
        }
        Ok(grads)
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&self, node: &Node, g: &Tensor, out: &mut [Option<Tensor>]) -> Result<()> {
        let mut acc = |v: Var, t: Tensor| accumulate(&mut out[v.0], t);
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Conv2d { x, w, b, stride, pad } => {
                let gr = kernels::conv2d_backward(
                    self.value(*x),
                    self.value(*w),
                    g,
                    *stride,
                    *pad,
                    self.wants(*x),
                )?;
                if let Some(dx) = gr.input {
                    acc(*x, dx);
                }
                if self.wants(*w) {
                    acc(*w, gr.weight);
                }
                if let Some(b) = b.filter(|b| self.wants(*b)) {
                    acc(b, gr.bias);
                }
            }
            Op::TransposedConv2d { x, w, stride } => {
                let (dx, dw) = kernels::transposed_conv2d_backward(
                    self.value(*x),
                    self.value(*w),
                    g,
                    *stride,
                    0,
                    self.wants(*x),
                )?;
                if let Some(dx) = dx {
                    acc(*x, dx);
                }
                if self.wants(*w) {
                    acc(*w, dw);
                }
            }
            Op::MaxPool { x, argmax } => {
                acc(*x, kernels::maxpool_backward(self.shape(*x), argmax, g));
            }
            Op::AvgPool { x, kernel, stride } => {
                acc(*x, kernels::avgpool_backward(self.shape(*x), *kernel, *stride, g));
            }
            Op::Relu(x) => {
                let data = zip_map(self.value(*x), g, |v, gv| if v > 0.0 { gv } else { 0.0 });
                acc(*x, Tensor::from_vec(g.shape(), data)?);
            }
            Op::Sigmoid(x) => {
                let data = zip_map(&node.value, g, |y, gv| gv * y * (1.0 - y));
                acc(*x, Tensor::from_vec(g.shape(), data)?);
            }
            Op::Softmax(x) => {
                let s = g.shape();
                let mut dx = Tensor::zeros(s);
                for n in 0..s.n {
                    let y = node.value.item(n);
                    let gy = g.item(n);
                    let dot: Real = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                    for k in 0..s.c {
                        dx.data_mut()[n * s.c + k] = y[k] * (gy[k] - dot);
                    }
                }
                acc(*x, dx);
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    acc(*a, g.clone());
                }
                if self.wants(*b) {
                    acc(*b, g.clone());
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let d = zip_map(g, self.value(*b), |x, y| x * y);
                    acc(*a, Tensor::from_vec(g.shape(), d)?);
                }
                if self.wants(*b) {
                    let d = zip_map(g, self.value(*a), |x, y| x * y);
                    acc(*b, Tensor::from_vec(g.shape(), d)?);
                }
            }
            Op::MulChannels { x, gate } => {
                let (xv, gv) = (self.value(*x), self.value(*gate));
                let s = xv.shape();
                if self.wants(*x) {
                    acc(*x, Tensor::from_fn(s, |n, c, h, w| g.at(n, c, h, w) * gv.at(n, 0, h, w)));
                }
                if self.wants(*gate) {
                    let dg = Tensor::from_fn(gv.shape(), |n, _, h, w| {
                        (0..s.c).map(|c| g.at(n, c, h, w) * xv.at(n, c, h, w)).sum()
                    });
                    acc(*gate, dg);
                }
            }
            Op::Scale(x, f) => acc(*x, g.map(|v| v * f)),
            Op::Concat(xs) => {
                let s = g.shape();
                let mut offset = 0;
                for &v in xs {
                    let sv = self.shape(v);
                    if self.wants(v) {
                        let mut data = Vec::with_capacity(sv.numel());
                        for n in 0..s.n {
                            let start = n * s.item() + offset * s.plane();
                            data.extend_from_slice(&g.data()[start..start + sv.item()]);
                        }
                        acc(v, Tensor::from_vec(sv, data)?);
                    }
                    offset += sv.c;
                }
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (n_items, outs) = (g.shape().n, g.shape().c);
                let features = xv.shape().item();
                if self.wants(*x) {
                    let mut dx = Tensor::zeros(xv.shape());
                    for n in 0..n_items {
                        let dst = &mut dx.data_mut()[n * features..(n + 1) * features];
                        for o in 0..outs {
                            let go = g.data()[n * outs + o];
                            let wo = &wv.data()[o * features..(o + 1) * features];
                            dst.iter_mut().zip(wo).for_each(|(d, w)| *d += go * w);
                        }
                    }
                    acc(*x, dx);
                }
                if self.wants(*w) {
                    let mut dw = Tensor::zeros(wv.shape());
                    for n in 0..n_items {
                        let xi = xv.item(n);
                        for o in 0..outs {
                            let go = g.data()[n * outs + o];
                            let dst = &mut dw.data_mut()[o * features..(o + 1) * features];
                            dst.iter_mut().zip(xi).for_each(|(d, x)| *d += go * x);
                        }
                    }
                    acc(*w, dw);
                }
                if self.wants(*b) {
                    let mut db = Tensor::zeros(Shape::new(1, outs, 1, 1));
                    for n in 0..n_items {
                        for o in 0..outs {
                            db.data_mut()[o] += g.data()[n * outs + o];
                        }
                    }
                    acc(*b, db);
                }
            }
            Op::Sum(x) => acc(*x, Tensor::full(self.shape(*x), g.data()[0])),
            Op::Mean(x) => {
                let s = self.shape(*x);
                acc(*x, Tensor::full(s, g.data()[0] / s.numel() as Real));
            }
            Op::SegmentMean { x, labels, counts } => {
                let s = self.shape(*x);
                let mut dx = Tensor::zeros(s);
                for (n, (lab, cnt)) in labels.iter().zip(counts).enumerate() {
                    let mut sum = vec![0.0; cnt.len()];
                    for (&l, &gv) in lab.iter().zip(g.item(n)) {
                        sum[l as usize] += gv;
                    }
                    let p = s.plane();
                    for (i, &l) in lab.iter().enumerate() {
                        dx.data_mut()[n * p + i] = sum[l as usize] / cnt[l as usize] as Real;
                    }
                }
                acc(*x, dx);
            }
            Op::WeightedBce {
                p,
                target,
                pos_weight,
                neg_weight,
            } => {
                let pv = self.value(*p);
                let s = pv.shape();
                let scale = g.data()[0] / s.n as Real;
                let mut dp = Tensor::zeros(s);
                for n in 0..s.n {
                    let k = s.item();
                    let dst = &mut dp.data_mut()[n * k..(n + 1) * k];
                    for ((d, &pi), &ti) in dst.iter_mut().zip(pv.item(n)).zip(target.item(n)) {
                        if pi <= CLAMP || pi >= 1.0 - CLAMP {
                            continue;
                        }
                        *d = scale * (-pos_weight[n] * ti / pi + neg_weight[n] * (1.0 - ti) / (1.0 - pi));
                    }
                }
                acc(*p, dp);
            }
            Op::SoftmaxCrossEntropy { logits, labels } => {
                let probs = softmax_rows(self.value(*logits));
                let s = probs.shape();
                let scale = g.data()[0] / s.n as Real;
                let mut dz = probs;
                for (n, &l) in labels.iter().enumerate() {
                    dz.data_mut()[n * s.c + l] -= 1.0;
                }
                dz.data_mut().iter_mut().for_each(|v| *v *= scale);
                acc(*logits, dz);
            }
        }
        Ok(())
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` requires gradients
    /// and is reachable from the loss.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn accumulate(slot: &mut Option<Tensor>, t: Tensor) {
    match slot {
        Some(existing) => existing.add_assign(&t),
        None => *slot = Some(t),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(Real, Real) -> Real) -> Vec<Real> {
    a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
}

pub(crate) fn sigmoid(v: Real) -> Real {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn softmax_rows(z: &Tensor) -> Tensor {
    let s = z.shape();
    let mut y = Tensor::zeros(s);
    for n in 0..s.n {
        let row = z.item(n);
        let m = row.iter().copied().fold(Real::NEG_INFINITY, Real::max);
        let e: Vec<Real> = row.iter().map(|v| (v - m).exp()).collect();
        let total: Real = e.iter().sum();
        for (k, ek) in e.iter().enumerate() {
            y.data_mut()[n * s.c + k] = ek / total;
        }
    }
    y
}
