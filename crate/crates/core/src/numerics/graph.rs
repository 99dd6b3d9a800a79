//! Tape-based reverse-mode automatic differentiation over dense tensors.
//!
//! Every op appends a node holding its forward value; node ids are therefore
//! already a topological order and [`Graph::backward`] walks them in reverse,
//! touching each node once. Nodes whose inputs are all constants never
//! receive gradient buffers.

use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use super::float::gemm;
use super::{Float, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Sentinel used by [`Graph::gather`] for "emit zero".
pub const GATHER_ZERO: u32 = u32::MAX;

/// Explicit boolean attention mask; `allows(i, j)` means query `i` may read key `j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    size: usize,
    allowed: Vec<bool>,
}

impl Mask {
    pub fn from_fn(size: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut allowed = Vec::with_capacity(size * size);
        for i in 0..size {
            for j in 0..size {
                allowed.push(f(i, j));
            }
        }
        Self { size, allowed }
    }

    /// Lower-triangular mask including the diagonal.
    pub fn causal(size: usize) -> Self {
        Self::from_fn(size, |i, j| j <= i)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn allows(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.size + j]
    }

    pub fn set(&mut self, i: usize, j: usize, allow: bool) {
        self.allowed[i * self.size + j] = allow;
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.allowed[i * self.size..(i + 1) * self.size]
    }

    pub fn validate(&self) -> Result<()> {
        match (0..self.size).find(|&i| !self.row(i).iter().any(|&a| a)) {
            Some(row) => Err(Error::FullyMaskedRow { row }),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    /// tanh approximation
    Gelu,
    Silu,
    Sigmoid,
    Tanh,
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    Reshape(Var),
    Gather { src: Var, index: Rc<Vec<u32>> },
    Concat(Vec<Var>),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T> },
    Act { x: Var, kind: Activation },
    Attention { q: Var, k: Var, v: Var, heads: usize, batch: usize, mask: Rc<Mask>, probs: Vec<T> },
    GroupMean { x: Var, group: usize },
    AffineCols { x: Var, scale: Vec<T> },
    Mse(Var, Var),
    MeanAll(Var),
    SumAll(Var),
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<T> },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddBias(..) => "add_bias",
            Op::Scale(..) => "scale",
            Op::Reshape(..) => "reshape",
            Op::Gather { .. } => "gather",
            Op::Concat(..) => "concat",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Act { kind: Activation::Gelu, .. } => "gelu",
            Op::Act { kind: Activation::Silu, .. } => "silu",
            Op::Act { kind: Activation::Sigmoid, .. } => "sigmoid",
            Op::Act { kind: Activation::Tanh, .. } => "tanh",
            Op::Attention { .. } => "attention",
            Op::GroupMean { .. } => "group_mean",
            Op::AffineCols { .. } => "affine_cols",
            Op::Mse(..) => "mse",
            Op::MeanAll(..) => "mean",
            Op::SumAll(..) => "sum",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }
}

struct Node<T: Float> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// A single forward/backward computation.
pub struct Graph<T: Float = f32> {
    nodes: Vec<Node<T>>,
    params: HashMap<String, (Var, bool)>,
    check_finite: bool,
    fault: Option<&'static str>,
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            check_finite: false,
            fault: None,
        }
    }

    /// Fail every op whose output contains NaN or Inf.
    pub fn with_finite_check(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    /// Test fixture: scales the gradient flowing into every `op` node by 1.5,
    /// producing a deliberately wrong backward pass for that op.
    #[doc(hidden)]
    pub fn inject_gradient_fault(&mut self, op: &'static str) {
        self.fault = Some(op);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Result<Var> {
        if self.check_finite && !value.is_finite() {
            return Err(Error::NonFinite { op: op.name().to_string() });
        }
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient (e.g. an input whose sensitivity is probed).
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Leaf for a named parameter; repeated lookups of one name share a node.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str, trainable: bool) -> Result<Var> {
        if let Some(&(v, was)) = self.params.get(name) {
            if was != trainable {
                return Err(Error::invalid(format!(
                    "parameter `{name}` requested as both trainable and frozen"
                )));
            }
            return Ok(v);
        }
        let t = store.get(name)?.clone();
        let v = if trainable { self.input(t) } else { self.constant(t) };
        self.params.insert(name.to_string(), (v, trainable));
        Ok(v)
    }

    fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
        Error::Shape(format!("{op}: {a:?} vs {b:?}"))
    }

    fn dims2(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Self::shape_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, false);
        let ng = self.any_grad(&[a, b]);
        self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b), ng)
    }

    fn zip(&mut self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Self::shape_err(name, self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let ng = self.any_grad(&[a, b]);
        self.push(Tensor::new(&shape, data)?, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// `x[r, :] + bias` for every row.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let c = self.value(x).cols();
        if self.value(bias).len() != c {
            return Err(Self::shape_err("add_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_exact_mut(c) {
            for (o, &bb) in row.iter_mut().zip(&b) {
                *o += bb;
            }
        }
        let ng = self.any_grad(&[x, bias]);
        self.push(out, Op::AddBias(x, bias), ng)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        let out = self.value(x).map(|v| v * s);
        let ng = self.any_grad(&[x]);
        self.push(out, Op::Scale(x, s), ng)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let ng = self.any_grad(&[x]);
        self.push(out, Op::Reshape(x), ng)
    }

    /// Element gather: `out[i] = src[index[i]]`, or 0 where `index[i] == GATHER_ZERO`.
    pub fn gather(&mut self, src: Var, index: Rc<Vec<u32>>, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != index.len() {
            return Err(Error::Shape(format!("gather: {} indices for shape {shape:?}", index.len())));
        }
        let s = self.value(src).data();
        if let Some(&bad) = index.iter().find(|&&i| i != GATHER_ZERO && i as usize >= s.len()) {
            return Err(Error::Shape(format!("gather index {bad} out of {}", s.len())));
        }
        let data = index
            .iter()
            .map(|&i| if i == GATHER_ZERO { T::zero() } else { s[i as usize] })
            .collect();
        let ng = self.any_grad(&[src]);
        self.push(Tensor::new(shape, data)?, Op::Gather { src, index }, ng)
    }

    /// Selects whole rows of a 2-D tensor.
    pub fn select_rows(&mut self, src: Var, rows: &[usize]) -> Result<Var> {
        let (r, c) = self.dims2(src);
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(Error::Shape(format!("select_rows: row {bad} of {r}")));
        }
        let mut index = Vec::with_capacity(rows.len() * c);
        for &row in rows {
            index.extend((row * c..(row + 1) * c).map(|i| i as u32));
        }
        self.gather(src, Rc::new(index), &[rows.len(), c])
    }

    /// Stacks 2-D tensors with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != c {
                return Err(Self::shape_err("concat_rows", self.shape(parts[0]), t.shape()));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let ng = self.any_grad(parts);
        self.push(Tensor::new(&[rows, c], data)?, Op::Concat(parts.to_vec()), ng)
    }

    /// Normalizes each row over the last dimension, then applies `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (rows, d) = self.dims2(x);
        if self.value(gamma).len() != d || self.value(beta).len() != d {
            return Err(Self::shape_err("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let eps = T::of(eps);
        let dn = T::of(d as f64);
        let xs = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![T::zero(); rows * d];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); rows * d];
        for r in 0..rows {
            let row = &xs[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let inv = T::one() / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat[r * d + j] = h;
                out[r * d + j] = g[j] * h + b[j];
            }
        }
        let shape = self.shape(x).to_vec();
        let ng = self.any_grad(&[x, gamma, beta]);
        self.push(Tensor::new(&shape, out)?, Op::LayerNorm { x, gamma, beta, xhat, inv_std }, ng)
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let xv = self.value(x);
        let out = match kind {
            Activation::Gelu => xv.map(gelu),
            Activation::Silu => xv.map(|v| v * sigmoid(v)),
            Activation::Sigmoid => xv.map(sigmoid),
            Activation::Tanh => xv.map(|v| v.tanh()),
        };
        let ng = self.any_grad(&[x]);
        self.push(out, Op::Act { x, kind }, ng)
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Gelu)
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Silu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Sigmoid)
    }

    /// Multi-head scaled dot-product attention over `batch` independent
    /// sequences stacked row-wise (`[batch·T, heads·d_head]`), sharing `mask`.
    /// Masked logits are excluded from the softmax entirely.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        mask: &Rc<Mask>,
        heads: usize,
        batch: usize,
    ) -> Result<Var> {
        let t = mask.size();
        let (rows, width) = self.dims2(q);
        for other in [k, v] {
            if self.shape(other) != self.shape(q) {
                return Err(Self::shape_err("attention", self.shape(q), self.shape(other)));
            }
        }
        if rows != batch * t || heads == 0 || width % heads != 0 {
            return Err(Error::Shape(format!(
                "attention: {rows}x{width} rows for batch {batch}, T {t}, heads {heads}"
            )));
        }
        mask.validate()?;
        let dh = width / heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![T::zero(); batch * heads * t * t];
        let mut out = vec![T::zero(); rows * width];
        let mut logits = vec![T::zero(); t * t];
        for b in 0..batch {
            for h in 0..heads {
                let off = b * t * width + h * dh;
                // logits = Q_bh · K_bhᵀ
                unsafe {
                    T::gemm_raw(
                        t,
                        dh,
                        t,
                        qd.as_ptr().add(off),
                        width as isize,
                        1,
                        kd.as_ptr().add(off),
                        1,
                        width as isize,
                        T::zero(),
                        logits.as_mut_ptr(),
                        t as isize,
                        1,
                    );
                }
                let p = &mut probs[(b * heads + h) * t * t..(b * heads + h + 1) * t * t];
                for i in 0..t {
                    let allowed = mask.row(i);
                    let lrow = &logits[i * t..(i + 1) * t];
                    let mut max = T::neg_infinity();
                    for j in 0..t {
                        if allowed[j] && lrow[j] > max {
                            max = lrow[j];
                        }
                    }
                    let prow = &mut p[i * t..(i + 1) * t];
                    let mut sum = T::zero();
                    for j in 0..t {
                        if allowed[j] {
                            let e = ((lrow[j] - max) * scale).exp_fast();
                            prow[j] = e;
                            sum += e;
                        }
                    }
                    let inv = T::one() / sum;
                    for pj in prow.iter_mut() {
                        *pj *= inv;
                    }
                }
                // out_bh = P · V_bh
                unsafe {
                    T::gemm_raw(
                        t,
                        t,
                        dh,
                        p.as_ptr(),
                        t as isize,
                        1,
                        vd.as_ptr().add(off),
                        width as isize,
                        1,
                        T::zero(),
                        out.as_mut_ptr().add(off),
                        width as isize,
                        1,
                    );
                }
            }
        }
        let ng = self.any_grad(&[q, k, v]);
        self.push(
            Tensor::new(&[rows, width], out)?,
            Op::Attention { q, k, v, heads, batch, mask: mask.clone(), probs },
            ng,
        )
    }

    /// Mean over consecutive groups of `group` rows: `[G·group, d] → [G, d]`.
    pub fn group_mean(&mut self, x: Var, group: usize) -> Result<Var> {
        let (rows, d) = self.dims2(x);
        if group == 0 || rows % group != 0 {
            return Err(Error::Shape(format!("group_mean: {rows} rows in groups of {group}")));
        }
        let g = rows / group;
        let inv = T::one() / T::of(group as f64);
        let xs = self.value(x).data();
        let mut out = vec![T::zero(); g * d];
        for r in 0..rows {
            let o = &mut out[(r / group) * d..(r / group + 1) * d];
            for (oo, &v) in o.iter_mut().zip(&xs[r * d..(r + 1) * d]) {
                *oo += v;
            }
        }
        for v in &mut out {
            *v *= inv;
        }
        let ng = self.any_grad(&[x]);
        self.push(Tensor::new(&[g, d], out)?, Op::GroupMean { x, group }, ng)
    }

    /// Per-column constant affine map `x·scale[c] + shift[c]`.
    pub fn affine_cols(&mut self, x: Var, scale: &[T], shift: &[T]) -> Result<Var> {
        let c = self.value(x).cols();
        if scale.len() != c || shift.len() != c {
            return Err(Error::Shape(format!("affine_cols: {c} columns vs {} stats", scale.len())));
        }
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_exact_mut(c) {
            for j in 0..c {
                row[j] = row[j] * scale[j] + shift[j];
            }
        }
        let ng = self.any_grad(&[x]);
        self.push(out, Op::AffineCols { x, scale: scale.to_vec() }, ng)
    }

    /// Mean squared error, a scalar.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Self::shape_err("mse", self.shape(a), self.shape(b)));
        }
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let n = T::of(x.len() as f64);
        let s = x.iter().zip(y).map(|(&p, &q)| (p - q) * (p - q)).sum::<T>() / n;
        let ng = self.any_grad(&[a, b]);
        self.push(Tensor::scalar(s), Op::Mse(a, b), ng)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.data().iter().copied().sum::<T>() / T::of(t.len() as f64);
        let ng = self.any_grad(&[x]);
        self.push(Tensor::scalar(s), Op::MeanAll(x), ng)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum::<T>();
        let ng = self.any_grad(&[x]);
        self.push(Tensor::scalar(s), Op::SumAll(x), ng)
    }

    /// Mean softmax cross-entropy of `[B, K]` logits against class labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (b, k) = self.dims2(logits);
        if labels.len() != b || labels.iter().any(|&l| l >= k) {
            return Err(Error::Shape(format!("cross_entropy: {b}x{k} logits, {} labels", labels.len())));
        }
        let xs = self.value(logits).data();
        let mut probs = vec![T::zero(); b * k];
        let mut loss = T::zero();
        for r in 0..b {
            let row = &xs[r * k..(r + 1) * k];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
            for j in 0..k {
                probs[r * k + j] = (row[j] - max).exp() / sum;
            }
            loss += sum.ln() + max - row[labels[r]];
        }
        loss = loss / T::of(b as f64);
        let ng = self.any_grad(&[logits]);
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, labels: labels.to_vec(), probs },
            ng,
        )
    }

    /// Exact reverse-mode gradients of a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let ls = self.value(loss);
        if ls.len() != 1 {
            return Err(Error::NonScalarLoss(ls.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(ls.shape(), T::one()));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(mut g) = grads[id].take() else { continue };
            if self.fault == Some(node.op.name()) {
                let k = T::of(1.5);
                g.data_mut().iter_mut().for_each(|v| *v *= k);
            }
            self.backward_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        let params = self
            .params
            .iter()
            .filter(|(_, &(_, trainable))| trainable)
            .map(|(n, &(v, _))| (n.clone(), v))
            .collect();
        Ok(Gradients { grads, params })
    }

    fn acc<'a>(&self, grads: &'a mut [Option<Tensor<T>>], v: Var) -> Option<&'a mut [T]> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.nodes[v.0].value.shape()));
        }
        slot.as_mut().map(|t| t.data_mut())
    }

    fn backward_node(&self, id: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[id];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims2(*a);
                let n = self.value(*b).cols();
                if let Some(ga) = self.acc(grads, *a) {
                    gemm(m, n, k, gd, false, self.value(*b).data(), true, ga, true);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    gemm(k, m, n, self.value(*a).data(), true, gd, false, gb, true);
                }
            }
            Op::Add(a, b) => {
                for (v, sign) in [(*a, T::one()), (*b, T::one())] {
                    if let Some(gv) = self.acc(grads, v) {
                        axpy(gv, gd, sign);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    axpy(ga, gd, T::one());
                }
                if let Some(gb) = self.acc(grads, *b) {
                    axpy(gb, gd, -T::one());
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..gd.len() {
                        ga[i] += gd[i] * bv[i];
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for i in 0..gd.len() {
                        gb[i] += gd[i] * av[i];
                    }
                }
            }
            Op::AddBias(x, bias) => {
                if let Some(gx) = self.acc(grads, *x) {
                    axpy(gx, gd, T::one());
                }
                let c = g.cols();
                if let Some(gb) = self.acc(grads, *bias) {
                    for row in gd.chunks_exact(c) {
                        for (o, &v) in gb.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                }
            }
            Op::Scale(x, s) => {
                if let Some(gx) = self.acc(grads, *x) {
                    axpy(gx, gd, *s);
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    axpy(gx, gd, T::one());
                }
            }
            Op::Gather { src, index } => {
                if let Some(gs) = self.acc(grads, *src) {
                    for (&i, &v) in index.iter().zip(gd) {
                        if i != GATHER_ZERO {
                            gs[i as usize] += v;
                        }
                    }
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if let Some(gp) = self.acc(grads, p) {
                        axpy(gp, &gd[off..off + n], T::one());
                    }
                    off += n;
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let d = g.cols();
                let rows = g.rows();
                if let Some(gg) = self.acc(grads, *gamma) {
                    for r in 0..rows {
                        for j in 0..d {
                            gg[j] += gd[r * d + j] * xhat[r * d + j];
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *beta) {
                    for row in gd.chunks_exact(d) {
                        for (o, &v) in gb.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                }
                let gamma_v = self.value(*gamma).data();
                if let Some(gx) = self.acc(grads, *x) {
                    let dn = T::of(d as f64);
                    let mut gh = vec![T::zero(); d];
                    for r in 0..rows {
                        let (mut m1, mut m2) = (T::zero(), T::zero());
                        for j in 0..d {
                            gh[j] = gd[r * d + j] * gamma_v[j];
                            m1 += gh[j];
                            m2 += gh[j] * xhat[r * d + j];
                        }
                        m1 = m1 / dn;
                        m2 = m2 / dn;
                        for j in 0..d {
                            gx[r * d + j] += inv_std[r] * (gh[j] - m1 - xhat[r * d + j] * m2);
                        }
                    }
                }
            }
            Op::Act { x, kind } => {
                let xv = self.value(*x).data();
                let yv = node.value.data();
                if let Some(gx) = self.acc(grads, *x) {
                    let it = gx.iter_mut().zip(gd).zip(xv.iter().zip(yv));
                    match kind {
                        Activation::Gelu => it.for_each(|((o, &g), (&x, _))| *o += g * gelu_grad(x)),
                        Activation::Silu => it.for_each(|((o, &g), (&x, _))| {
                            let s = sigmoid(x);
                            *o += g * s * (T::one() + x * (T::one() - s));
                        }),
                        Activation::Sigmoid => it.for_each(|((o, &g), (_, &y))| *o += g * y * (T::one() - y)),
                        Activation::Tanh => it.for_each(|((o, &g), (_, &y))| *o += g * (T::one() - y * y)),
                    }
                }
            }
            Op::Attention { q, k, v, heads, batch, mask, probs } => {
                self.attention_backward(*q, *k, *v, *heads, *batch, mask.size(), probs, gd, grads);
            }
            Op::GroupMean { x, group } => {
                let d = g.cols();
                let inv = T::one() / T::of(*group as f64);
                if let Some(gx) = self.acc(grads, *x) {
                    for (r, row) in gx.chunks_exact_mut(d).enumerate() {
                        let src = &gd[(r / group) * d..(r / group + 1) * d];
                        for (o, &v) in row.iter_mut().zip(src) {
                            *o += v * inv;
                        }
                    }
                }
            }
            Op::AffineCols { x, scale } => {
                let c = scale.len();
                if let Some(gx) = self.acc(grads, *x) {
                    for (row, grow) in gx.chunks_exact_mut(c).zip(gd.chunks_exact(c)) {
                        for j in 0..c {
                            row[j] += grow[j] * scale[j];
                        }
                    }
                }
            }
            Op::Mse(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let k = gd[0] * T::of(2.0) / T::of(av.len() as f64);
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..av.len() {
                        ga[i] += k * (av[i] - bv[i]);
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for i in 0..av.len() {
                        gb[i] -= k * (av[i] - bv[i]);
                    }
                }
            }
            Op::MeanAll(x) => {
                let n = self.value(*x).len();
                let k = gd[0] / T::of(n as f64);
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().for_each(|v| *v += k);
                }
            }
            Op::SumAll(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().for_each(|v| *v += gd[0]);
                }
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let (b, k) = self.dims2(*logits);
                let s = gd[0] / T::of(b as f64);
                if let Some(gl) = self.acc(grads, *logits) {
                    for r in 0..b {
                        for j in 0..k {
                            let onehot = if labels[r] == j { T::one() } else { T::zero() };
                            gl[r * k + j] += s * (probs[r * k + j] - onehot);
                        }
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        batch: usize,
        t: usize,
        probs: &[T],
        gd: &[T],
        grads: &mut [Option<Tensor<T>>],
    ) {
        let (_, width) = self.dims2(q);
        let dh = width / heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut dp = vec![T::zero(); t * t];
        // Gradients are staged in local buffers because q, k, v may alias.
        let mut gq = self.needs_grad(q).then(|| vec![T::zero(); qd.len()]);
        let mut gk = self.needs_grad(k).then(|| vec![T::zero(); kd.len()]);
        let mut gv = self.needs_grad(v).then(|| vec![T::zero(); vd.len()]);
        for b in 0..batch {
            for h in 0..heads {
                let off = b * t * width + h * dh;
                let p = &probs[(b * heads + h) * t * t..(b * heads + h + 1) * t * t];
                if let Some(gv) = gv.as_mut() {
                    // dV += Pᵀ · dO
                    unsafe {
                        T::gemm_raw(
                            t,
                            t,
                            dh,
                            p.as_ptr(),
                            1,
                            t as isize,
                            gd.as_ptr().add(off),
                            width as isize,
                            1,
                            T::one(),
                            gv.as_mut_ptr().add(off),
                            width as isize,
                            1,
                        );
                    }
                }
                if gq.is_none() && gk.is_none() {
                    continue;
                }
                // dP = dO · Vᵀ
                unsafe {
                    T::gemm_raw(
                        t,
                        dh,
                        t,
                        gd.as_ptr().add(off),
                        width as isize,
                        1,
                        vd.as_ptr().add(off),
                        1,
                        width as isize,
                        T::zero(),
                        dp.as_mut_ptr(),
                        t as isize,
                        1,
                    );
                }
                // dS = P ⊙ (dP − rowsum(P ⊙ dP)), folded with the logit scale.
                for i in 0..t {
                    let prow = &p[i * t..(i + 1) * t];
                    let drow = &mut dp[i * t..(i + 1) * t];
                    let dot: T = prow.iter().zip(drow.iter()).map(|(&a, &b)| a * b).sum();
                    for j in 0..t {
                        drow[j] = prow[j] * (drow[j] - dot) * scale;
                    }
                }
                if let Some(gq) = gq.as_mut() {
                    unsafe {
                        T::gemm_raw(
                            t,
                            t,
                            dh,
                            dp.as_ptr(),
                            t as isize,
                            1,
                            kd.as_ptr().add(off),
                            width as isize,
                            1,
                            T::one(),
                            gq.as_mut_ptr().add(off),
                            width as isize,
                            1,
                        );
                    }
                }
                if let Some(gk) = gk.as_mut() {
                    unsafe {
                        T::gemm_raw(
                            t,
                            t,
                            dh,
                            dp.as_ptr(),
                            1,
                            t as isize,
                            qd.as_ptr().add(off),
                            width as isize,
                            1,
                            T::one(),
                            gk.as_mut_ptr().add(off),
                            width as isize,
                            1,
                        );
                    }
                }
            }
        }
        for (var, staged) in [(q, gq), (k, gk), (v, gv)] {
            if let (Some(staged), Some(dst)) = (staged, self.acc(grads, var)) {
                axpy(dst, &staged, T::one());
            }
        }
    }

    /// Name of the op that produced `v`.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }
}

fn axpy<T: Float>(dst: &mut [T], src: &[T], a: T) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

pub(crate) fn sigmoid<T: Float>(v: T) -> T {
    T::one() / (T::one() + (-v).exp_fast())
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu<T: Float>(x: T) -> T {
    // 0.5·(1 + tanh u) = sigmoid(2u)
    let u = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    x * sigmoid(u + u)
}

fn gelu_grad<T: Float>(x: T) -> T {
    let u = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    let s = sigmoid(u + u);
    let du = T::of(GELU_C) * (T::one() + T::of(3.0 * GELU_A) * x * x);
    s + x * s * (T::one() - s) * (du + du)
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<T: Float = f32> {
    grads: Vec<Option<Tensor<T>>>,
    params: BTreeMap<String, Var>,
}

impl<T: Float> Gradients<T> {
    /// Gradient with respect to any node; `None` if no gradient reached it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for a trainable parameter, zero-filled when the loss does not depend on it.
    pub fn param(&self, name: &str, g: &Graph<T>) -> Option<Tensor<T>> {
        let &v = self.params.get(name)?;
        Some(self.wrt(v).cloned().unwrap_or_else(|| Tensor::zeros(g.shape(v))))
    }

    /// Every trainable parameter's gradient, keyed by name.
    pub fn into_params(mut self, g: &Graph<T>) -> BTreeMap<String, Tensor<T>> {
        let params = std::mem::take(&mut self.params);
        params
            .into_iter()
            .map(|(name, v)| {
                let t = self.grads[v.0].take().unwrap_or_else(|| Tensor::zeros(g.shape(v)));
                (name, t)
            })
            .collect()
    }
}
