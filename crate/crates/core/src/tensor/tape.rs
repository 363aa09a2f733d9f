use super::kernels::{self, ConvGeom, ConvParams, PoolGeom, PoolKind, PoolParams};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
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
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulElem { x: Var, w: Var, index: usize },
    AddN(Vec<Var>),
    MatMul(Var, Var),
    AddRowBias(Var, Var),
    Conv2d { x: Var, k: Var, p: ConvParams },
    MaxPool { x: Var, arg: Vec<usize> },
    AvgPool { x: Var, p: PoolParams },
    Normalize { x: Var, inv_std: Vec<f64> },
    ChannelAffine { x: Var, scale: Var, shift: Var },
    Softmax { x: Var, axis: usize },
    LogSoftmax { x: Var, axis: usize },
    Relu(Var),
    Ln { x: Var, floor: f64 },
    Sum(Var),
    Mean(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Narrow { x: Var, axis: usize, start: usize },
    PermuteChannels { x: Var, perm: Vec<usize> },
    Reshape(Var),
    SpatialMean(Var),
    Pick { x: Var, idx: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run recording of tensor operations.
///
/// Nodes are appended in execution order, so the node list is already a
/// topological order and backward is a single reverse sweep. Gradients of
/// leaves accumulate across [`Tape::backward`] calls until [`Tape::zero_grad`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

/// `(outer, len, inner)` split of a shape around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(t) => t.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a leaf. Leaves with `requires_grad` receive gradients on backward.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, present after a backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        self.grads[v.0].take()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor {
            shape: ta.shape().to_vec(),
            data,
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_with(a, b, |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_with(a, b, |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_with(a, b, |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|x| x * factor);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, factor), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        let rg = self.rg(&[a]);
        self.push(out, Op::AddScalar(a), rg)
    }

    /// `x * w[index]`, differentiable in both `x` and the selected entry of `w`.
    pub fn mul_elem(&mut self, x: Var, w: Var, index: usize) -> Result<Var> {
        let wn = self.value(w).numel();
        if index >= wn {
            return Err(Error::invalid(
                "mul_elem",
                format!("index {index} out of {wn}"),
            ));
        }
        let s = self.value(w).data()[index];
        let out = self.value(x).map(|v| v * s);
        let rg = self.rg(&[x, w]);
        Ok(self.push(out, Op::MulElem { x, w, index }, rg))
    }

    pub fn add_n(&mut self, xs: &[Var]) -> Result<Var> {
        let (&first, rest) = xs
            .split_first()
            .ok_or_else(|| Error::invalid("add_n", "empty input list"))?;
        for &v in rest {
            self.same_shape("add_n", first, v)?;
        }
        let mut out = self.value(first).clone();
        for &v in rest {
            let t = &self.nodes[v.0].value;
            out.add_assign(t);
        }
        let rg = self.rg(xs);
        Ok(self.push(out, Op::AddN(xs.to_vec()), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// `x[N,F] + b[F]` row-wise.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sx.len() != 2 || sb.len() != 1 || sx[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "add_row_bias",
                left: sx.to_vec(),
                right: sb.to_vec(),
            });
        }
        let f = sx[1];
        let bias = self.value(b).data();
        let mut out = self.value(x).clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += bias[i % f];
        }
        let rg = self.rg(&[x, b]);
        Ok(self.push(out, Op::AddRowBias(x, b), rg))
    }

    pub fn conv2d(&mut self, x: Var, k: Var, p: ConvParams) -> Result<Var> {
        let g = ConvGeom::new(self.shape(x), self.shape(k), p)?;
        let out = kernels::conv2d_forward(&g, self.value(x).data(), self.value(k).data());
        let rg = self.rg(&[x, k]);
        Ok(self.push(Tensor::new(g.out_shape(), out)?, Op::Conv2d { x, k, p }, rg))
    }

    pub fn pool2d(&mut self, kind: PoolKind, x: Var, p: PoolParams) -> Result<Var> {
        let g = PoolGeom::new(self.shape(x), p)?;
        let rg = self.rg(&[x]);
        match kind {
            PoolKind::Max => {
                let (out, arg) = kernels::max_pool_forward(&g, self.value(x).data());
                Ok(self.push(Tensor::new(g.out_shape(), out)?, Op::MaxPool { x, arg }, rg))
            }
            PoolKind::Avg => {
                let out = kernels::avg_pool_forward(&g, self.value(x).data());
                Ok(self.push(Tensor::new(g.out_shape(), out)?, Op::AvgPool { x, p }, rg))
            }
        }
    }

    /// Per-channel standardization over batch and spatial axes, no affine.
    pub fn normalize(&mut self, x: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 || shape[0] == 0 {
            return Err(Error::invalid("normalize", format!("bad shape {shape:?}")));
        }
        let (mean, var) = kernels::channel_moments(&shape, self.value(x).data());
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let c = shape[1];
        let hw: usize = shape[2..].iter().product();
        let mut out = self.value(x).clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let ch = (i / hw) % c;
            *v = (*v - mean[ch]) * inv_std[ch];
        }
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Normalize { x, inv_std }, rg))
    }

    /// `x * scale[c] + shift[c]` for channel axis 1.
    pub fn channel_affine(&mut self, x: Var, scale: Var, shift: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let c = *shape.get(1).unwrap_or(&0);
        if self.shape(scale) != [c] || self.shape(shift) != [c] {
            return Err(Error::ShapeMismatch {
                op: "channel_affine",
                left: shape,
                right: self.shape(scale).to_vec(),
            });
        }
        let hw: usize = shape[2..].iter().product();
        let (sc, sh) = (self.value(scale).data(), self.value(shift).data());
        let mut out = self.value(x).clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let ch = (i / hw) % c;
            *v = *v * sc[ch] + sh[ch];
        }
        let rg = self.rg(&[x, scale, shift]);
        Ok(self.push(out, Op::ChannelAffine { x, scale, shift }, rg))
    }

    fn check_axis(&self, op: &'static str, x: Var, axis: usize) -> Result<()> {
        let s = self.shape(x);
        if axis >= s.len() || s[axis] == 0 {
            return Err(Error::invalid(
                op,
                format!("axis {axis} invalid or empty for shape {s:?}"),
            ));
        }
        Ok(())
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("softmax", x, axis)?;
        let t = self.value(x);
        let (outer, len, inner) = split_axis(t.shape(), axis);
        let mut out = t.clone();
        let d = out.data_mut();
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let m = (0..len).map(|j| d[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for j in 0..len {
                    let e = (d[at(j)] - m).exp();
                    d[at(j)] = e;
                    z += e;
                }
                for j in 0..len {
                    d[at(j)] /= z;
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Softmax { x, axis }, rg))
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("log_softmax", x, axis)?;
        let t = self.value(x);
        let (outer, len, inner) = split_axis(t.shape(), axis);
        let mut out = t.clone();
        let d = out.data_mut();
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let m = (0..len).map(|j| d[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let lse = m + (0..len).map(|j| (d[at(j)] - m).exp()).sum::<f64>().ln();
                for j in 0..len {
                    d[at(j)] -= lse;
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::LogSoftmax { x, axis }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(&[x]);
        self.push(out, Op::Relu(x), rg)
    }

    /// `ln(max(x, floor))`; the gradient is zero where the clamp is active.
    pub fn ln_clamped(&mut self, x: Var, floor: f64) -> Var {
        let out = self.value(x).map(|v| v.max(floor).ln());
        let rg = self.rg(&[x]);
        self.push(out, Op::Ln { x, floor }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        if n == 0 {
            return Err(Error::invalid("mean", "empty tensor"));
        }
        let s: f64 = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::scalar(s / n as f64), Op::Mean(x), rg))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::invalid("concat", "empty input list"))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::invalid(
                "concat",
                format!("axis {axis} out of range for {base:?}"),
            ));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let ok = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    left: base,
                    right: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in xs {
                let t = self.value(v);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let rg = self.rg(xs);
        Ok(self.push(
            Tensor::new(shape, data)?,
            Op::Concat {
                inputs: xs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Sub-range `start..start+len` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(Error::invalid(
                "narrow",
                format!(
                    "range {start}..{} invalid on axis {axis} of {s:?}",
                    start + len
                ),
            ));
        }
        let (outer, full, inner) = split_axis(&s, axis);
        let t = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let b = (o * full + start) * inner;
            data.extend_from_slice(&t[b..b + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Narrow { x, axis, start }, rg))
    }

    /// Output channel `i` is input channel `perm[i]` (axis 1).
    pub fn permute_channels(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let mut seen = vec![false; perm.len()];
        let valid = s.len() >= 2
            && perm.len() == s[1]
            && perm
                .iter()
                .all(|&p| p < perm.len() && !std::mem::replace(&mut seen[p], true));
        if !valid {
            return Err(Error::invalid(
                "permute_channels",
                format!("bad permutation for {s:?}"),
            ));
        }
        let (n, c) = (s[0], s[1]);
        let hw: usize = s[2..].iter().product();
        let t = self.value(x).data();
        let mut data = Vec::with_capacity(t.len());
        for b in 0..n {
            for &p in perm {
                let base = (b * c + p) * hw;
                data.extend_from_slice(&t[base..base + hw]);
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::new(s, data)?,
            Op::PermuteChannels {
                x,
                perm: perm.to_vec(),
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// Global average over spatial axes: `[N,C,H,W] -> [N,C]`.
    pub fn spatial_mean(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || s[2] * s[3] == 0 {
            return Err(Error::invalid(
                "spatial_mean",
                format!("expected NCHW, got {s:?}"),
            ));
        }
        let hw = s[2] * s[3];
        let data = self
            .value(x)
            .data()
            .chunks(hw)
            .map(|c| c.iter().sum::<f64>() / hw as f64)
            .collect();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(vec![s[0], s[1]], data)?, Op::SpatialMean(x), rg))
    }

    /// Row-wise selection `x[n, idx[n]]` from a `[N, C]` matrix.
    pub fn pick(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || s[0] != idx.len() {
            return Err(Error::ShapeMismatch {
                op: "pick",
                left: s,
                right: vec![idx.len()],
            });
        }
        if let Some((i, &l)) = idx.iter().enumerate().find(|(_, &l)| l >= s[1]) {
            return Err(Error::LabelOutOfRange {
                label: l,
                classes: s[1],
                index: i,
            });
        }
        let t = self.value(x).data();
        let data = idx
            .iter()
            .enumerate()
            .map(|(n, &c)| t[n * s[1] + c])
            .collect();
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::new(vec![idx.len()], data)?,
            Op::Pick {
                x,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`; leaf gradients accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let ls = self.shape(loss);
        if ls.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss("backward", ls.to_vec()));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut g: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        g[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(dy) = g[i].take() else { continue };
            self.backward_node(i, dy, &mut g);
        }
        Ok(())
    }

    fn backward_node(&mut self, i: usize, dy: Tensor, g: &mut [Option<Tensor>]) {
        let nodes = &self.nodes;
        let rg = |v: &Var| nodes[v.0].requires_grad;
        let val = |v: &Var| &nodes[v.0].value;
        let like = |v: &Var, data: Vec<f64>| Tensor {
            shape: nodes[v.0].value.shape().to_vec(),
            data,
        };
        match &nodes[i].op {
            Op::Leaf => accumulate(&mut self.grads, Var(i), dy),
            Op::Add(a, b) => {
                if rg(b) {
                    accumulate(g, *b, dy.clone());
                }
                if rg(a) {
                    accumulate(g, *a, dy);
                }
            }
            Op::Sub(a, b) => {
                if rg(b) {
                    accumulate(g, *b, dy.map(|v| -v));
                }
                if rg(a) {
                    accumulate(g, *a, dy);
                }
            }
            Op::Mul(a, b) => {
                if rg(a) {
                    let d = dy
                        .data()
                        .iter()
                        .zip(val(b).data())
                        .map(|(x, y)| x * y)
                        .collect();
                    accumulate(g, *a, like(a, d));
                }
                if rg(b) {
                    let d = dy
                        .data()
                        .iter()
                        .zip(val(a).data())
                        .map(|(x, y)| x * y)
                        .collect();
                    accumulate(g, *b, like(b, d));
                }
            }
            Op::Scale(a, f) => accumulate(g, *a, dy.map(|v| v * f)),
            Op::AddScalar(a) => accumulate(g, *a, dy),
            Op::MulElem { x, w, index } => {
                let s = val(w).data()[*index];
                if rg(w) {
                    let dot: f64 = dy
                        .data()
                        .iter()
                        .zip(val(x).data())
                        .map(|(a, b)| a * b)
                        .sum();
                    let mut d = vec![0.0; val(w).numel()];
                    d[*index] = dot;
                    accumulate(g, *w, like(w, d));
                }
                if rg(x) {
                    accumulate(g, *x, dy.map(|v| v * s));
                }
            }
            Op::AddN(xs) => {
                for x in xs.iter().filter(|v| rg(v)) {
                    accumulate(g, *x, dy.clone());
                }
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (val(a).shape(), val(b).shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if rg(a) {
                    let bt = transpose_raw(val(b).data(), k, n);
                    accumulate(g, *a, like(a, matmul_raw(dy.data(), &bt, m, n, k)));
                }
                if rg(b) {
                    let at = transpose_raw(val(a).data(), m, k);
                    accumulate(g, *b, like(b, matmul_raw(&at, dy.data(), k, m, n)));
                }
            }
            Op::AddRowBias(x, b) => {
                if rg(b) {
                    let f = val(b).numel();
                    let mut d = vec![0.0; f];
                    for (j, v) in dy.data().iter().enumerate() {
                        d[j % f] += v;
                    }
                    accumulate(g, *b, like(b, d));
                }
                if rg(x) {
                    accumulate(g, *x, dy);
                }
            }
            Op::Conv2d { x, k, p } => {
                let geom = ConvGeom::new(val(x).shape(), val(k).shape(), *p)
                    .expect("validated on forward");
                let (dx, dk) =
                    kernels::conv2d_backward(&geom, val(x).data(), val(k).data(), dy.data());
                if rg(x) {
                    accumulate(g, *x, like(x, dx));
                }
                if rg(k) {
                    accumulate(g, *k, like(k, dk));
                }
            }
            Op::MaxPool { x, arg } => {
                let mut dx = vec![0.0; val(x).numel()];
                for (o, &src) in arg.iter().enumerate() {
                    dx[src] += dy.data()[o];
                }
                accumulate(g, *x, like(x, dx));
            }
            Op::AvgPool { x, p } => {
                let geom = PoolGeom::new(val(x).shape(), *p).expect("validated on forward");
                accumulate(g, *x, like(x, kernels::avg_pool_backward(&geom, dy.data())));
            }
            Op::Normalize { x, inv_std } => {
                let xhat = nodes[i].value.data();
                let s = val(x).shape();
                let (n, c) = (s[0], s[1]);
                let hw: usize = s[2..].iter().product();
                let m = (n * hw) as f64;
                let mut sum_dy = vec![0.0; c];
                let mut sum_dyx = vec![0.0; c];
                for (j, (&d, &xh)) in dy.data().iter().zip(xhat).enumerate() {
                    let ch = (j / hw) % c;
                    sum_dy[ch] += d;
                    sum_dyx[ch] += d * xh;
                }
                let dx = dy
                    .data()
                    .iter()
                    .zip(xhat)
                    .enumerate()
                    .map(|(j, (&d, &xh))| {
                        let ch = (j / hw) % c;
                        inv_std[ch] / m * (m * d - sum_dy[ch] - xh * sum_dyx[ch])
                    })
                    .collect();
                accumulate(g, *x, like(x, dx));
            }
            Op::ChannelAffine { x, scale, shift } => {
                let s = val(x).shape();
                let c = s[1];
                let hw: usize = s[2..].iter().product();
                let sc = val(scale).data();
                if rg(scale) || rg(shift) {
                    let mut dsc = vec![0.0; c];
                    let mut dsh = vec![0.0; c];
                    for (j, (&d, &xv)) in dy.data().iter().zip(val(x).data()).enumerate() {
                        let ch = (j / hw) % c;
                        dsc[ch] += d * xv;
                        dsh[ch] += d;
                    }
                    if rg(scale) {
                        accumulate(g, *scale, like(scale, dsc));
                    }
                    if rg(shift) {
                        accumulate(g, *shift, like(shift, dsh));
                    }
                }
                if rg(x) {
                    let dx = dy
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(j, &d)| d * sc[(j / hw) % c])
                        .collect();
                    accumulate(g, *x, like(x, dx));
                }
            }
            Op::Softmax { x, axis } => {
                let y = nodes[i].value.data();
                let (outer, len, inner) = split_axis(val(x).shape(), *axis);
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for k in 0..inner {
                        let at = |j: usize| (o * len + j) * inner + k;
                        let dot: f64 = (0..len).map(|j| dy.data()[at(j)] * y[at(j)]).sum();
                        for j in 0..len {
                            dx[at(j)] = y[at(j)] * (dy.data()[at(j)] - dot);
                        }
                    }
                }
                accumulate(g, *x, like(x, dx));
            }
            Op::LogSoftmax { x, axis } => {
                let y = nodes[i].value.data();
                let (outer, len, inner) = split_axis(val(x).shape(), *axis);
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for k in 0..inner {
                        let at = |j: usize| (o * len + j) * inner + k;
                        let total: f64 = (0..len).map(|j| dy.data()[at(j)]).sum();
                        for j in 0..len {
                            dx[at(j)] = dy.data()[at(j)] - y[at(j)].exp() * total;
                        }
                    }
                }
                accumulate(g, *x, like(x, dx));
            }
            Op::Relu(x) => {
                let d = dy
                    .data()
                    .iter()
                    .zip(val(x).data())
                    .map(|(&d, &v)| if v > 0.0 { d } else { 0.0 })
                    .collect();
                accumulate(g, *x, like(x, d));
            }
            Op::Ln { x, floor } => {
                let d = dy
                    .data()
                    .iter()
                    .zip(val(x).data())
                    .map(|(&d, &v)| if v > *floor { d / v } else { 0.0 })
                    .collect();
                accumulate(g, *x, like(x, d));
            }
            Op::Sum(x) => {
                let d = dy.item();
                accumulate(g, *x, val(x).map(|_| d));
            }
            Op::Mean(x) => {
                let d = dy.item() / val(x).numel() as f64;
                accumulate(g, *x, val(x).map(|_| d));
            }
            Op::Concat { inputs, axis } => {
                let (outer, _, inner) = split_axis(nodes[i].value.shape(), *axis);
                let mut parts: Vec<Vec<f64>> = inputs
                    .iter()
                    .map(|v| Vec::with_capacity(val(v).numel()))
                    .collect();
                let mut off = 0;
                for _ in 0..outer {
                    for (p, v) in parts.iter_mut().zip(inputs) {
                        let chunk = val(v).shape()[*axis] * inner;
                        p.extend_from_slice(&dy.data()[off..off + chunk]);
                        off += chunk;
                    }
                }
                for (p, v) in parts.into_iter().zip(inputs) {
                    if rg(v) {
                        accumulate(g, *v, like(v, p));
                    }
                }
            }
            Op::Narrow { x, axis, start } => {
                let (outer, full, inner) = split_axis(val(x).shape(), *axis);
                let len = nodes[i].value.shape()[*axis];
                let mut dx = vec![0.0; val(x).numel()];
                for o in 0..outer {
                    let b = (o * full + start) * inner;
                    dx[b..b + len * inner]
                        .copy_from_slice(&dy.data()[o * len * inner..(o + 1) * len * inner]);
                }
                accumulate(g, *x, like(x, dx));
            }
            Op::PermuteChannels { x, perm } => {
                let s = val(x).shape();
                let c = s[1];
                let hw: usize = s[2..].iter().product();
                let mut dx = vec![0.0; val(x).numel()];
                for b in 0..s[0] {
                    for (out_c, &in_c) in perm.iter().enumerate() {
                        let src = (b * c + out_c) * hw;
                        let dst = (b * c + in_c) * hw;
                        dx[dst..dst + hw].copy_from_slice(&dy.data()[src..src + hw]);
                    }
                }
                accumulate(g, *x, like(x, dx));
            }
            Op::Reshape(x) => accumulate(g, *x, like(x, dy.into_data())),
            Op::SpatialMean(x) => {
                let s = val(x).shape();
                let hw = s[2] * s[3];
                let mut dx = Vec::with_capacity(val(x).numel());
                for &d in dy.data() {
                    dx.extend(std::iter::repeat_n(d / hw as f64, hw));
                }
                accumulate(g, *x, like(x, dx));
            }
            Op::Pick { x, idx } => {
                let c = val(x).shape()[1];
                let mut dx = vec![0.0; val(x).numel()];
                for (n, &k) in idx.iter().enumerate() {
                    dx[n * c + k] = dy.data()[n];
                }
                accumulate(g, *x, like(x, dx));
            }
        }
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}
