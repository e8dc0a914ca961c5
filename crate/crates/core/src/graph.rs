//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation in creation order, so the node list is
//! already topologically sorted and `backward` simply walks it in reverse.
//! Parameters are borrowed from a [`ParamStore`] rather than copied; after
//! `backward`, [`Gradients::accumulate_into`] adds the parameter gradients to
//! the store's accumulators.

use std::borrow::Cow;
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Tensor, MAX_RANK};

pub const LAYER_NORM_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<f64>,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
        in_cols: usize,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Sum(Var),
    MeanRows(Var),
    Reshape(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Gelu(_) => "gelu",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Dropout { .. } => "dropout",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::SliceRows { .. } => "slice_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::ConcatCols(_) => "concat_cols",
            Op::Sum(_) => "sum",
            Op::MeanRows(_) => "mean_rows",
            Op::Reshape(_) => "reshape",
        }
    }
}

struct Node<'a> {
    shape: Vec<usize>,
    value: Cow<'a, [f64]>,
    op: Op,
    needs_grad: bool,
}

impl Node<'_> {
    fn dims(&self) -> (usize, usize) {
        let cols = *self.shape.last().unwrap_or(&1);
        (self.value.len() / cols.max(1), cols)
    }
}

/// Operation tape. Build with [`Graph::new`] for training or
/// [`Graph::inference`] when no gradients are needed.
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
    grad_enabled: bool,
    params: HashMap<ParamId, Var>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
            params: HashMap::new(),
        }
    }

    /// A graph that never tracks gradients.
    pub fn inference() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].dims()
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v), self.value(v).to_vec()).expect("graph values are finite")
    }

    fn push(&mut self, shape: Vec<usize>, value: Cow<'a, [f64]>, op: Op, needs_grad: bool) -> Result<Var> {
        if let Some(i) = value.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{} produced a non-finite value at element {i}", op.name())));
        }
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad: needs_grad && self.grad_enabled,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Borrowed input that never receives a gradient.
    pub fn constant(&mut self, t: &'a Tensor) -> Var {
        self.push(t.shape().to_vec(), Cow::Borrowed(t.data()), Op::Leaf, false)
            .expect("tensors are finite")
    }

    /// Owned input that never receives a gradient.
    pub fn constant_owned(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, Cow::Owned(t.into_data()), Op::Leaf, false)
            .expect("tensors are finite")
    }

    /// Borrowed input that receives a gradient iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &'a Tensor) -> Var {
        let needs = t.requires_grad();
        self.push(t.shape().to_vec(), Cow::Borrowed(t.data()), Op::Leaf, needs)
            .expect("tensors are finite")
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &'a ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.params.get(&id) {
            return *v;
        }
        let t = store.get(id);
        let v = self
            .push(t.shape().to_vec(), Cow::Borrowed(t.data()), Op::Leaf, true)
            .expect("parameters are finite");
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape(format!("matmul {sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = mm(self.value(a), self.value(b), m, k, n);
        let needs = self.needs(a) || self.needs(b);
        self.push(vec![m, n], Cow::Owned(out), Op::MatMul(a, b), needs)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::Shape(format!("transpose of rank-{} tensor", s.len())));
        }
        let (r, c) = (s[0], s[1]);
        let v = self.value(x);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = v[i * c + j];
            }
        }
        let needs = self.needs(x);
        self.push(vec![c, r], Cow::Owned(out), Op::Transpose(x), needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!("add {:?} + {:?}", self.shape(a), self.shape(b))));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let needs = self.needs(a) || self.needs(b);
        let shape = self.shape(a).to_vec();
        self.push(shape, Cow::Owned(out), Op::Add(a, b), needs)
    }

    /// Adds a length-`c` bias to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, c) = self.dims(x);
        if self.value(bias).len() != c {
            return Err(Error::Shape(format!(
                "bias of length {} for {c} columns",
                self.value(bias).len()
            )));
        }
        let b = self.value(bias);
        let out = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v + b[i % c])
            .collect();
        let needs = self.needs(x) || self.needs(bias);
        let shape = self.shape(x).to_vec();
        self.push(shape, Cow::Owned(out), Op::AddRow(x, bias), needs)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!("mul {:?} * {:?}", self.shape(a), self.shape(b))));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let needs = self.needs(a) || self.needs(b);
        let shape = self.shape(a).to_vec();
        self.push(shape, Cow::Owned(out), Op::Mul(a, b), needs)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let out = self.value(x).iter().map(|v| v * s).collect();
        let needs = self.needs(x);
        let shape = self.shape(x).to_vec();
        self.push(shape, Cow::Owned(out), Op::Scale(x, s), needs)
    }

    /// GELU, tanh approximation: `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).iter().map(|&v| gelu(v)).collect();
        let needs = self.needs(x);
        let shape = self.shape(x).to_vec();
        self.push(shape, Cow::Owned(out), Op::Gelu(x), needs)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).iter().map(|v| v.tanh()).collect();
        let needs = self.needs(x);
        let shape = self.shape(x).to_vec();
        self.push(shape, Cow::Owned(out), Op::Tanh(x), needs)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).iter().map(|&v| sigmoid(v)).collect();
        let needs = self.needs(x);
        let shape = self.shape(x).to_vec();
        self.push(shape, Cow::Owned(out), Op::Sigmoid(x), needs)
    }

    /// Max-stabilized softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Shape(format!("softmax axis {axis} for shape {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out = self.value(x).to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let max = (0..len).map(|j| out[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..len {
                    let e = (out[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    sum += e;
                }
                for j in 0..len {
                    out[idx(j)] /= sum;
                }
            }
        }
        let needs = self.needs(x);
        self.push(shape, Cow::Owned(out), Op::Softmax { x, outer, len, inner }, needs)
    }

    /// Normalizes each row over the last extent, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (rows, c) = self.dims(x);
        if self.value(gain).len() != c || self.value(bias).len() != c {
            return Err(Error::Shape(format!("layer_norm affine parameters must have length {c}")));
        }
        let xv = self.value(x);
        let (g, b) = (self.value(gain), self.value(bias));
        let mut xhat = vec![0.0; rows * c];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; rows * c];
        for r in 0..rows {
            let row = &xv[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + eps).sqrt();
            rstd[r] = s;
            for j in 0..c {
                let h = (row[j] - mean) * s;
                xhat[r * c + j] = h;
                out[r * c + j] = h * g[j] + b[j];
            }
        }
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        let shape = self.shape(x).to_vec();
        self.push(shape, Cow::Owned(out), Op::LayerNorm { x, gain, bias, xhat, rstd }, needs)
    }

    /// Inverted dropout. Identity (the same node) when `training` is false or `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut Rng, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("dropout probability {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.uniform() < p { 0.0 } else { keep })
            .collect();
        let out = self.value(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        let needs = self.needs(x);
        let shape = self.shape(x).to_vec();
        self.push(shape, Cow::Owned(out), Op::Dropout { x, mask }, needs)
    }

    /// `-log softmax(logits)[label]` over all elements of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let z = self.value(logits);
        if label >= z.len() {
            return Err(Error::InvalidArgument(format!(
                "label {label} out of range for {} classes",
                z.len()
            )));
        }
        let probs = softmax_vec(z);
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = lse - z[label];
        let needs = self.needs(logits);
        self.push(vec![1], Cow::Owned(vec![loss]), Op::CrossEntropy { logits, label, probs }, needs)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if start + len > r || len == 0 {
            return Err(Error::Shape(format!("rows {start}..{} of {r}", start + len)));
        }
        let out = self.value(x)[start * c..(start + len) * c].to_vec();
        let needs = self.needs(x);
        self.push(vec![len, c], Cow::Owned(out), Op::SliceRows { x, start }, needs)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if start + len > c || len == 0 {
            return Err(Error::Shape(format!("cols {start}..{} of {c}", start + len)));
        }
        let v = self.value(x);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&v[i * c + start..i * c + start + len]);
        }
        let needs = self.needs(x);
        self.push(vec![r, len], Cow::Owned(out), Op::SliceCols { x, start, in_cols: c }, needs)
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = parts
            .first()
            .map(|p| self.dims(*p).1)
            .ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let mut out = Vec::new();
        let mut rows = 0;
        for p in parts {
            let (r, pc) = self.dims(*p);
            if pc != c {
                return Err(Error::Shape(format!("concat_rows column mismatch {pc} vs {c}")));
            }
            rows += r;
            out.extend_from_slice(self.value(*p));
        }
        let needs = parts.iter().any(|p| self.needs(*p));
        self.push(vec![rows, c], Cow::Owned(out), Op::ConcatRows(parts.to_vec()), needs)
    }

    /// Joins matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = parts
            .first()
            .map(|p| self.dims(*p).0)
            .ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let widths: Vec<usize> = parts.iter().map(|p| self.dims(*p).1).collect();
        if parts.iter().any(|p| self.dims(*p).0 != r) {
            return Err(Error::Shape("concat_cols row mismatch".into()));
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; r * total];
        let mut off = 0;
        for (p, w) in parts.iter().zip(&widths) {
            let v = self.value(*p);
            for i in 0..r {
                out[i * total + off..i * total + off + w].copy_from_slice(&v[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let needs = parts.iter().any(|p| self.needs(*p));
        self.push(vec![r, total], Cow::Owned(out), Op::ConcatCols(parts.to_vec()), needs)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).iter().sum();
        let needs = self.needs(x);
        self.push(vec![1], Cow::Owned(vec![s]), Op::Sum(x), needs)
    }

    /// Column means, as a `1 x c` matrix.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims(x);
        let v = self.value(x);
        let mut out = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                out[j] += v[i * c + j];
            }
        }
        out.iter_mut().for_each(|o| *o /= r as f64);
        let needs = self.needs(x);
        self.push(vec![1, c], Cow::Owned(out), Op::MeanRows(x), needs)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.is_empty() || shape.len() > MAX_RANK || shape.iter().product::<usize>() != self.value(x).len() {
            return Err(Error::Shape(format!("reshape {:?} -> {shape:?}", self.shape(x))));
        }
        let out = self.value(x).to_vec();
        let needs = self.needs(x);
        self.push(shape.to_vec(), Cow::Owned(out), Op::Reshape(x), needs)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.needs(loss) {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let Some(gout) = grads[i].take() else { continue };
            self.backprop_node(i, &gout, &mut grads);
            grads[i] = Some(gout);
        }
        let params = self.params.iter().map(|(id, v)| (*id, v.0)).collect();
        Ok(Gradients { grads, params })
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let nodes = &self.nodes;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = nodes[a.0].dims();
                let n = nodes[b.0].dims().1;
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                if let Some(ga) = slot(nodes, grads, *a) {
                    // dA = dC . B^T
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            ga[r * k + p] += dot(grow, brow);
                        }
                    }
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    // dB = A^T . dC
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let a_rp = av[r * k + p];
                            if a_rp != 0.0 {
                                axpy(&mut gb[p * n..(p + 1) * n], a_rp, grow);
                            }
                        }
                    }
                }
            }
            Op::Transpose(x) => {
                let (r, c) = nodes[x.0].dims();
                if let Some(gx) = slot(nodes, grads, *x) {
                    for a in 0..r {
                        for b in 0..c {
                            gx[a * c + b] += g[b * r + a];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    axpy(ga, 1.0, g);
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    axpy(gb, 1.0, g);
                }
            }
            Op::AddRow(x, bias) => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    axpy(gx, 1.0, g);
                }
                let c = nodes[bias.0].value.len();
                if let Some(gb) = slot(nodes, grads, *bias) {
                    for (j, v) in g.iter().enumerate() {
                        gb[j % c] += v;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                if let Some(ga) = slot(nodes, grads, *a) {
                    for j in 0..g.len() {
                        ga[j] += g[j] * bv[j];
                    }
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    for j in 0..g.len() {
                        gb[j] += g[j] * av[j];
                    }
                }
            }
            Op::Scale(x, s) => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    axpy(gx, *s, g);
                }
            }
            Op::Gelu(x) => {
                let xv = &nodes[x.0].value;
                if let Some(gx) = slot(nodes, grads, *x) {
                    for j in 0..g.len() {
                        gx[j] += g[j] * gelu_grad(xv[j]);
                    }
                }
            }
            Op::Tanh(x) => {
                let y = &node.value;
                if let Some(gx) = slot(nodes, grads, *x) {
                    for j in 0..g.len() {
                        gx[j] += g[j] * (1.0 - y[j] * y[j]);
                    }
                }
            }
            Op::Sigmoid(x) => {
                let y = &node.value;
                if let Some(gx) = slot(nodes, grads, *x) {
                    for j in 0..g.len() {
                        gx[j] += g[j] * y[j] * (1.0 - y[j]);
                    }
                }
            }
            Op::Softmax { x, outer, len, inner } => {
                let y = &node.value;
                if let Some(gx) = slot(nodes, grads, *x) {
                    for o in 0..*outer {
                        for i in 0..*inner {
                            let idx = |j: usize| (o * len + j) * inner + i;
                            let s: f64 = (0..*len).map(|j| g[idx(j)] * y[idx(j)]).sum();
                            for j in 0..*len {
                                gx[idx(j)] += y[idx(j)] * (g[idx(j)] - s);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let c = nodes[gain.0].value.len();
                let rows = rstd.len();
                let gv = &nodes[gain.0].value;
                if let Some(gg) = slot(nodes, grads, *gain) {
                    for r in 0..rows {
                        for j in 0..c {
                            gg[j] += g[r * c + j] * xhat[r * c + j];
                        }
                    }
                }
                if let Some(gb) = slot(nodes, grads, *bias) {
                    for r in 0..rows {
                        for j in 0..c {
                            gb[j] += g[r * c + j];
                        }
                    }
                }
                if let Some(gx) = slot(nodes, grads, *x) {
                    for r in 0..rows {
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..c {
                            let dh = g[r * c + j] * gv[j];
                            m1 += dh;
                            m2 += dh * xhat[r * c + j];
                        }
                        m1 /= c as f64;
                        m2 /= c as f64;
                        for j in 0..c {
                            let dh = g[r * c + j] * gv[j];
                            gx[r * c + j] += rstd[r] * (dh - m1 - xhat[r * c + j] * m2);
                        }
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    for j in 0..g.len() {
                        gx[j] += g[j] * mask[j];
                    }
                }
            }
            Op::CrossEntropy { logits, label, probs } => {
                if let Some(gl) = slot(nodes, grads, *logits) {
                    for (j, p) in probs.iter().enumerate() {
                        let t = if j == *label { 1.0 } else { 0.0 };
                        gl[j] += g[0] * (p - t);
                    }
                }
            }
            Op::SliceRows { x, start } => {
                let c = nodes[x.0].dims().1;
                if let Some(gx) = slot(nodes, grads, *x) {
                    axpy(&mut gx[start * c..start * c + g.len()], 1.0, g);
                }
            }
            Op::SliceCols { x, start, in_cols } => {
                let (r, w) = node.dims();
                if let Some(gx) = slot(nodes, grads, *x) {
                    for i in 0..r {
                        axpy(&mut gx[i * in_cols + start..i * in_cols + start + w], 1.0, &g[i * w..(i + 1) * w]);
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = nodes[p.0].value.len();
                    if let Some(gp) = slot(nodes, grads, *p) {
                        axpy(gp, 1.0, &g[off..off + n]);
                    }
                    off += n;
                }
            }
            Op::ConcatCols(parts) => {
                let (r, total) = node.dims();
                let mut off = 0;
                for p in parts {
                    let w = nodes[p.0].dims().1;
                    if let Some(gp) = slot(nodes, grads, *p) {
                        for i in 0..r {
                            axpy(&mut gp[i * w..(i + 1) * w], 1.0, &g[i * total + off..i * total + off + w]);
                        }
                    }
                    off += w;
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    gx.iter_mut().for_each(|v| *v += g[0]);
                }
            }
            Op::MeanRows(x) => {
                let (r, c) = nodes[x.0].dims();
                if let Some(gx) = slot(nodes, grads, *x) {
                    for i in 0..r {
                        for j in 0..c {
                            gx[i * c + j] += g[j] / r as f64;
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    axpy(gx, 1.0, g);
                }
            }
        }
    }
}

fn slot<'g>(nodes: &[Node<'_>], grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
    if !nodes[v.0].needs_grad {
        return None;
    }
    let n = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` requires one.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds every parameter gradient into the store's accumulators.
    pub fn accumulate_into(&self, store: &mut ParamStore) -> Result<()> {
        for (id, node) in &self.params {
            if let Some(g) = &self.grads[*node] {
                store.get_mut(*id).accumulate_grad(g)?;
            }
        }
        store.note_accumulation();
        Ok(())
    }
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-stabilized softmax of a plain slice.
pub fn softmax_vec(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip != 0.0 {
                axpy(orow, aip, &b[p * n..(p + 1) * n]);
            }
        }
    }
    out
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}
