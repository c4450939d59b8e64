//! Define-by-run reverse-mode differentiation.
//!
//! Every op appends a node holding its output value. Parents always precede
//! children, so walking node indices backwards is a reverse topological
//! order and each node is visited exactly once.

use super::tensor::{axis_split, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRowBias(Var, Var),
    AddChannelBias(Var, Var),
    Conv2d { x: Var, k: Var, stride: usize },
    Relu(Var),
    AvgPool { x: Var, window: (usize, usize) },
    Concat { inputs: Vec<Var>, axis: usize },
    Reshape(Var),
    L2Normalize { x: Var, axis: usize, eps: f64 },
    LogSumExp { x: Var, axis: usize },
    Gather { x: Var, indices: Vec<usize> },
    Sum(Var),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::AddRowBias(x, b) | Op::AddChannelBias(x, b) => vec![*x, *b],
            Op::Conv2d { x, k, .. } => vec![*x, *k],
            Op::Transpose(a) | Op::Scale(a, _) | Op::Relu(a) | Op::Reshape(a) | Op::Sum(a) => vec![*a],
            Op::AvgPool { x, .. } | Op::L2Normalize { x, .. } | Op::LogSumExp { x, .. } | Op::Gather { x, .. } => {
                vec![*x]
            }
            Op::Concat { inputs, .. } => inputs.clone(),
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    /// Some leaf upstream of this node is differentiable.
    needs_grad: bool,
}

/// Recorded computation. Single-threaded; build one per forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every node that influenced it.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `like` when `v` did not contribute.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

fn conv_out(input: usize, kernel: usize, stride: usize) -> usize {
    (input - kernel) / stride + 1
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
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

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if cfg!(debug_assertions) {
            if let Some(i) = value.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("{op:?} produced non-finite value at {i}")));
            }
        }
        let needs_grad = op.inputs().iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Differentiable input or parameter.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push(v, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).transpose()?;
        self.push(v, Op::Transpose(a))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op, what: &str) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let v = Tensor::new(x.shape().to_vec(), data)?;
        self.push(v, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |p, q| p + q, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |p, q| p - q, Op::Sub(a, b), "sub")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |p, q| p * q, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    /// `x[n × m] + b[m]` added to every row.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (n, m) = self.value(x).dims2("add_row_bias")?;
        if self.value(b).len() != m {
            return Err(Error::Shape(format!("row bias of {} for width {m}", self.value(b).len())));
        }
        let mut out = self.value(x).clone();
        let bias = self.value(b).data().to_vec();
        for i in 0..n {
            for (o, bv) in out.data_mut()[i * m..(i + 1) * m].iter_mut().zip(&bias) {
                *o += bv;
            }
        }
        self.push(out, Op::AddRowBias(x, b))
    }

    /// `x[c × h × w] + b[c]` added to every pixel of each channel.
    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        if shape.len() != 3 || self.value(b).len() != shape[0] {
            return Err(Error::Shape(format!(
                "channel bias of {} for shape {shape:?}",
                self.value(b).len()
            )));
        }
        let plane = shape[1] * shape[2];
        let mut out = self.value(x).clone();
        let bias = self.value(b).data().to_vec();
        for (c, bv) in bias.iter().enumerate() {
            out.data_mut()[c * plane..(c + 1) * plane].iter_mut().for_each(|o| *o += bv);
        }
        self.push(out, Op::AddChannelBias(x, b))
    }

    /// Valid cross-correlation of `x[c_in × h × w]` with `k[c_out × c_in × kh × kw]`.
    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize) -> Result<Var> {
        let (xs, ks) = (self.value(x).shape(), self.value(k).shape());
        let ([ci, h, w], [co, ci2, kh, kw]) = (xs, ks) else {
            return Err(Error::Shape(format!("conv2d expects [c,h,w] and [o,c,kh,kw], got {xs:?} and {ks:?}")));
        };
        let (ci, h, w, co, kh, kw) = (*ci, *h, *w, *co, *kh, *kw);
        if ci != *ci2 || kh > h || kw > w || stride == 0 {
            return Err(Error::Shape(format!("conv2d: input {xs:?}, kernel {ks:?}, stride {stride}")));
        }
        let (oh, ow) = (conv_out(h, kh, stride), conv_out(w, kw, stride));
        let (xd, kd) = (self.value(x).data(), self.value(k).data());
        let mut out = vec![0.0; co * oh * ow];
        for o in 0..co {
            let y = &mut out[o * oh * ow..(o + 1) * oh * ow];
            for c in 0..ci {
                for u in 0..kh {
                    for v in 0..kw {
                        let kv = kd[((o * ci + c) * kh + u) * kw + v];
                        for i in 0..oh {
                            let xrow = &xd[(c * h + i * stride + u) * w + v..];
                            let yrow = &mut y[i * ow..(i + 1) * ow];
                            if stride == 1 {
                                for (yv, xv) in yrow.iter_mut().zip(&xrow[..ow]) {
                                    *yv += kv * xv;
                                }
                            } else {
                                for (j, yv) in yrow.iter_mut().enumerate() {
                                    *yv += kv * xrow[j * stride];
                                }
                            }
                        }
                    }
                }
            }
        }
        let v = Tensor::new(vec![co, oh, ow], out)?;
        self.push(v, Op::Conv2d { x, k, stride })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(|a| a.max(0.0));
        self.push(v, Op::Relu(x))
    }

    /// Non-overlapping mean pooling over the last two axes of `[c × h × w]`.
    /// Trailing rows/columns that do not fill a window are dropped.
    pub fn avgpool(&mut self, x: Var, window: (usize, usize)) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        let [c, h, w] = shape[..] else {
            return Err(Error::Shape(format!("avgpool expects [c,h,w], got {shape:?}")));
        };
        let (ph, pw) = window;
        if ph == 0 || pw == 0 || ph > h || pw > w {
            return Err(Error::Shape(format!("avgpool window {window:?} for {h}x{w}")));
        }
        let (oh, ow) = (h / ph, w / pw);
        let xd = self.value(x).data();
        let norm = 1.0 / (ph * pw) as f64;
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    let mut s = 0.0;
                    for u in 0..ph {
                        for v in 0..pw {
                            s += xd[(ch * h + i * ph + u) * w + j * pw + v];
                        }
                    }
                    out[(ch * oh + i) * ow + j] = s * norm;
                }
            }
        }
        let v = Tensor::new(vec![c, oh, ow], out)?;
        self.push(v, Op::AvgPool { x, window })
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let base = self.value(*first).shape().to_vec();
        axis_split(&base, axis)?;
        let mut total = 0;
        for &v in inputs {
            let s = self.value(v).shape();
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::Shape(format!("concat along {axis}: {base:?} vs {s:?}")));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis)?;
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let block = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let v = Tensor::new(shape, out)?;
        self.push(v, Op::Concat { inputs: inputs.to_vec(), axis })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).reshape(shape)?;
        self.push(v, Op::Reshape(x))
    }

    /// `x / max(||x||, eps)` along `axis`.
    pub fn l2_normalize(&mut self, x: Var, axis: usize, eps: f64) -> Result<Var> {
        let t = self.value(x);
        let (outer, len, inner) = axis_split(t.shape(), axis)?;
        let mut out = t.clone();
        for o in 0..outer {
            for n in 0..inner {
                let idx = |i: usize| (o * len + i) * inner + n;
                let norm = (0..len).map(|i| t.data()[idx(i)].powi(2)).sum::<f64>().sqrt().max(eps);
                for i in 0..len {
                    out.data_mut()[idx(i)] /= norm;
                }
            }
        }
        self.push(out, Op::L2Normalize { x, axis, eps })
    }

    /// `log(sum(exp(x)))` along `axis`, shifted by the maximum. The axis is removed.
    pub fn logsumexp(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        let (outer, len, inner) = axis_split(t.shape(), axis)?;
        if len == 0 {
            return Err(Error::Shape("logsumexp over an empty axis".into()));
        }
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for n in 0..inner {
                let vals = (0..len).map(|i| t.data()[(o * len + i) * inner + n]);
                out.push(lse(vals));
            }
        }
        let mut shape = t.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let v = Tensor::new(shape, out)?;
        self.push(v, Op::LogSumExp { x, axis })
    }

    /// Flat-index selection; output is a vector.
    pub fn gather(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if let Some(i) = indices.iter().find(|&&i| i >= t.len()) {
            return Err(Error::Shape(format!("gather index {i} out of {} values", t.len())));
        }
        let v = Tensor::vector(indices.iter().map(|&i| t.data()[i]).collect());
        self.push(v, Op::Gather { x, indices: indices.to_vec() })
    }

    /// Sum of all elements, left to right.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::Sum(x))
    }

    /// Reverse pass from a one-element `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::full(self.value(root).shape(), 1.0));
        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else { continue };
            self.propagate(idx, &dy, &mut grads)?;
            grads[idx] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, dy: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let wanted = |v: Var| self.nodes[v.0].needs_grad;
        let mut acc = |v: Var, g: Tensor| {
            if !wanted(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        };
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, dy.matmul(&bv.transpose()?)?);
                acc(*b, av.transpose()?.matmul(dy)?);
            }
            Op::Transpose(a) => acc(*a, dy.transpose()?),
            Op::Add(a, b) => {
                acc(*a, dy.clone());
                acc(*b, dy.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, dy.clone());
                acc(*b, dy.map(|g| -g));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let da = dy.data().iter().zip(bv.data()).map(|(g, y)| g * y).collect();
                let db = dy.data().iter().zip(av.data()).map(|(g, x)| g * x).collect();
                acc(*a, Tensor::new(dy.shape().to_vec(), da)?);
                acc(*b, Tensor::new(dy.shape().to_vec(), db)?);
            }
            Op::Scale(a, c) => acc(*a, dy.map(|g| g * c)),
            Op::AddRowBias(x, b) => {
                let (n, m) = dy.dims2("add_row_bias")?;
                let mut db = vec![0.0; m];
                for i in 0..n {
                    for (d, g) in db.iter_mut().zip(&dy.data()[i * m..(i + 1) * m]) {
                        *d += g;
                    }
                }
                acc(*x, dy.clone());
                acc(*b, Tensor::new(self.value(*b).shape().to_vec(), db)?);
            }
            Op::AddChannelBias(x, b) => {
                let c = dy.shape()[0];
                let plane = dy.len() / c;
                let db = (0..c).map(|ch| dy.data()[ch * plane..(ch + 1) * plane].iter().sum()).collect();
                acc(*x, dy.clone());
                acc(*b, Tensor::new(self.value(*b).shape().to_vec(), db)?);
            }
            Op::Conv2d { x, k, stride } => {
                let (xv, kv) = (self.value(*x), self.value(*k));
                let [ci, h, w] = xv.shape()[..] else { unreachable!("checked in forward") };
                let [co, _, kh, kw] = kv.shape()[..] else { unreachable!("checked in forward") };
                let (oh, ow) = (dy.shape()[1], dy.shape()[2]);
                let s = *stride;
                let (xd, kd, gd) = (xv.data(), kv.data(), dy.data());
                let want_dx = wanted(*x);
                let mut dx = vec![0.0; if want_dx { xv.len() } else { 0 }];
                let mut dk = vec![0.0; kv.len()];
                for o in 0..co {
                    let g = &gd[o * oh * ow..(o + 1) * oh * ow];
                    for c in 0..ci {
                        for u in 0..kh {
                            for v in 0..kw {
                                let kidx = ((o * ci + c) * kh + u) * kw + v;
                                let kval = kd[kidx];
                                let mut dkv = 0.0;
                                for i in 0..oh {
                                    let base = (c * h + i * s + u) * w + v;
                                    let grow = &g[i * ow..(i + 1) * ow];
                                    if s == 1 {
                                        let xrow = &xd[base..base + ow];
                                        dkv += dot4(grow, xrow);
                                        if want_dx {
                                            for (d, gv) in dx[base..base + ow].iter_mut().zip(grow) {
                                                *d += gv * kval;
                                            }
                                        }
                                    } else {
                                        for (j, gv) in grow.iter().enumerate() {
                                            dkv += gv * xd[base + j * s];
                                            if want_dx {
                                                dx[base + j * s] += gv * kval;
                                            }
                                        }
                                    }
                                }
                                dk[kidx] += dkv;
                            }
                        }
                    }
                }
                if want_dx {
                    acc(*x, Tensor::new(xv.shape().to_vec(), dx)?);
                }
                acc(*k, Tensor::new(kv.shape().to_vec(), dk)?);
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let d = dy.data().iter().zip(xv.data()).map(|(g, v)| if *v > 0.0 { *g } else { 0.0 }).collect();
                acc(*x, Tensor::new(xv.shape().to_vec(), d)?);
            }
            Op::AvgPool { x, window } => {
                let xv = self.value(*x);
                let [c, h, w] = xv.shape()[..] else { unreachable!("checked in forward") };
                let (ph, pw) = *window;
                let (oh, ow) = (h / ph, w / pw);
                let norm = 1.0 / (ph * pw) as f64;
                let mut dx = vec![0.0; xv.len()];
                for ch in 0..c {
                    for i in 0..oh {
                        for j in 0..ow {
                            let g = dy.data()[(ch * oh + i) * ow + j] * norm;
                            for u in 0..ph {
                                for v in 0..pw {
                                    dx[(ch * h + i * ph + u) * w + j * pw + v] += g;
                                }
                            }
                        }
                    }
                }
                acc(*x, Tensor::new(xv.shape().to_vec(), dx)?);
            }
            Op::Concat { inputs, axis } => {
                let (outer, _, inner) = axis_split(dy.shape(), *axis)?;
                let mut offset = 0;
                for &v in inputs {
                    let shape = self.value(v).shape().to_vec();
                    let len = shape[*axis];
                    let total = dy.shape()[*axis];
                    let mut part = Vec::with_capacity(shape.iter().product());
                    for o in 0..outer {
                        let start = (o * total + offset) * inner;
                        part.extend_from_slice(&dy.data()[start..start + len * inner]);
                    }
                    offset += len;
                    acc(v, Tensor::new(shape, part)?);
                }
            }
            Op::Reshape(x) => acc(*x, dy.reshape(self.value(*x).shape())?),
            Op::L2Normalize { x, axis, eps } => {
                let xv = self.value(*x);
                let yv = &self.nodes[idx].value;
                let (outer, len, inner) = axis_split(xv.shape(), *axis)?;
                let mut dx = vec![0.0; xv.len()];
                for o in 0..outer {
                    for n in 0..inner {
                        let id = |i: usize| (o * len + i) * inner + n;
                        let raw = (0..len).map(|i| xv.data()[id(i)].powi(2)).sum::<f64>().sqrt();
                        if raw > *eps {
                            let dot: f64 = (0..len).map(|i| yv.data()[id(i)] * dy.data()[id(i)]).sum();
                            for i in 0..len {
                                dx[id(i)] = (dy.data()[id(i)] - yv.data()[id(i)] * dot) / raw;
                            }
                        } else {
                            for i in 0..len {
                                dx[id(i)] = dy.data()[id(i)] / eps;
                            }
                        }
                    }
                }
                acc(*x, Tensor::new(xv.shape().to_vec(), dx)?);
            }
            Op::LogSumExp { x, axis } => {
                let xv = self.value(*x);
                let yv = &self.nodes[idx].value;
                let (outer, len, inner) = axis_split(xv.shape(), *axis)?;
                let mut dx = vec![0.0; xv.len()];
                for o in 0..outer {
                    for n in 0..inner {
                        let r = o * inner + n;
                        let (g, y) = (dy.data()[r], yv.data()[r]);
                        for i in 0..len {
                            let id = (o * len + i) * inner + n;
                            dx[id] = g * (xv.data()[id] - y).exp();
                        }
                    }
                }
                acc(*x, Tensor::new(xv.shape().to_vec(), dx)?);
            }
            Op::Gather { x, indices } => {
                let xv = self.value(*x);
                let mut dx = vec![0.0; xv.len()];
                for (g, &i) in dy.data().iter().zip(indices) {
                    dx[i] += g;
                }
                acc(*x, Tensor::new(xv.shape().to_vec(), dx)?);
            }
            Op::Sum(x) => {
                let g = dy.item();
                acc(*x, Tensor::full(self.value(*x).shape(), g));
            }
        }
        Ok(())
    }
}

/// Dot product with four interleaved partial sums, combined in a fixed order.
fn dot4(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            lanes[l] += x[l] * y[l];
        }
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}

/// Max-shifted log-sum-exp of a non-empty sequence, summed left to right.
pub fn lse(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_forward_values() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![-1.0, 2.0]));
        let r = g.relu(x).unwrap();
        assert_eq!(g.value(r).data(), &[0.0, 2.0]);

        let v = g.leaf(Tensor::matrix(&[&[3.0, 4.0]]).unwrap());
        let n = g.l2_normalize(v, 1, 1e-12).unwrap();
        assert_eq!(g.value(n).data(), &[0.6, 0.8]);

        let z = g.leaf(Tensor::vector(vec![0.0, 0.0]));
        let l = g.logsumexp(z, 0).unwrap();
        assert!((g.value(l).item() - 2f64.ln()).abs() < 1e-15);
        let big = g.leaf(Tensor::vector(vec![1000.0, 1000.0]));
        let l = g.logsumexp(big, 0).unwrap();
        assert_eq!(g.value(l).item(), 1000.0 + 2f64.ln());
        let one = g.leaf(Tensor::vector(vec![-3.25]));
        let l = g.logsumexp(one, 0).unwrap();
        assert_eq!(g.value(l).item(), -3.25);
    }

    #[test]
    fn zero_vector_normalizes_to_zero() {
        let mut g = Graph::new();
        let v = g.leaf(Tensor::matrix(&[&[0.0, 0.0]]).unwrap());
        let n = g.l2_normalize(v, 1, 1e-12).unwrap();
        assert_eq!(g.value(n).data(), &[0.0, 0.0]);
    }

    #[test]
    fn concat_keeps_left_block() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::new(vec![2, 3], (0..6).map(f64::from).collect()).unwrap());
        let b = g.leaf(Tensor::new(vec![2, 5], (10..20).map(f64::from).collect()).unwrap());
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.value(c).shape(), &[2, 8]);
        assert_eq!(g.value(c).row(0)[..3], [0.0, 1.0, 2.0]);
        assert_eq!(g.value(c).row(1)[..3], [3.0, 4.0, 5.0]);
        assert_eq!(g.value(c).row(1)[3..], [15.0, 16.0, 17.0, 18.0, 19.0]);
        let bad = g.leaf(Tensor::zeros(&[3, 1]));
        assert!(g.concat(&[a, bad], 1).is_err());
    }

    #[test]
    fn conv_identity_and_box() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![2, 3, 3], (0..18).map(f64::from).collect()).unwrap());
        let mut k = Tensor::zeros(&[2, 2, 1, 1]);
        k.data_mut()[0] = 1.0;
        k.data_mut()[3] = 1.0;
        let k = g.leaf(k);
        let y = g.conv2d(x, k, 1).unwrap();
        assert_eq!(g.value(y), g.value(x));

        let c = g.leaf(Tensor::full(&[1, 5, 5], 2.0));
        let boxk = g.leaf(Tensor::full(&[1, 1, 3, 3], 1.0));
        let y = g.conv2d(c, boxk, 1).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 3, 3]);
        assert!(g.value(y).data().iter().all(|&v| v == 18.0));
        let too_big = g.leaf(Tensor::zeros(&[1, 1, 6, 6]));
        assert!(g.conv2d(c, too_big, 1).is_err());
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, -2.0, 3.0]));
        let s = g.sum(x).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn non_finite_values_are_caught_in_debug() {
        if !cfg!(debug_assertions) {
            return;
        }
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![f64::MAX, f64::MAX]));
        assert!(matches!(g.scale(x, 10.0), Err(Error::Numeric(_))));
    }
}
