//! Parameter initialisation and the layer building blocks shared by the
//! tokenizer, the autoregressive backbone and the flow head.

use std::rc::Rc;

use rand::Rng;

use crate::error::Result;
use crate::numerics::{Float, Graph, Mask, ParamStore, Tensor, Var};

pub fn init_linear<T: Float, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    name: &str,
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) {
    init_linear_scaled(store, name, fan_in, fan_out, 1.0, rng);
}

/// Normal weights with std `gain / sqrt(fan_in)`, zero bias.
pub fn init_linear_scaled<T: Float, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    name: &str,
    fan_in: usize,
    fan_out: usize,
    gain: f64,
    rng: &mut R,
) {
    let std = gain / (fan_in as f64).sqrt();
    store.insert(format!("{name}.w"), Tensor::randn(&[fan_in, fan_out], std, rng));
    store.insert(format!("{name}.b"), Tensor::zeros(&[fan_out]));
}

pub fn init_layer_norm<T: Float>(store: &mut ParamStore<T>, name: &str, dim: usize) {
    store.insert(format!("{name}.g"), Tensor::full(&[dim], T::one()));
    store.insert(format!("{name}.b"), Tensor::zeros(&[dim]));
}

pub fn linear<T: Float>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    name: &str,
    x: Var,
    trainable: bool,
) -> Result<Var> {
    let w = g.param(store, &format!("{name}.w"), trainable)?;
    let b = g.param(store, &format!("{name}.b"), trainable)?;
    let h = g.matmul(x, w)?;
    g.add_bias(h, b)
}

pub const LN_EPS: f64 = 1e-5;

pub fn layer_norm<T: Float>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    name: &str,
    x: Var,
    trainable: bool,
) -> Result<Var> {
    let gamma = g.param(store, &format!("{name}.g"), trainable)?;
    let beta = g.param(store, &format!("{name}.b"), trainable)?;
    g.layer_norm(x, gamma, beta, LN_EPS)
}

/// Shape of one pre-norm transformer block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockShape {
    pub dim: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
}

pub fn init_block<T: Float, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    prefix: &str,
    shape: BlockShape,
    depth: usize,
    rng: &mut R,
) {
    let d = shape.dim;
    // residual branches start small so deep stacks begin near identity
    let out_gain = 1.0 / (2.0 * depth.max(1) as f64).sqrt();
    init_layer_norm(store, &format!("{prefix}.ln1"), d);
    for proj in ["q", "k", "v"] {
        init_linear(store, &format!("{prefix}.attn.{proj}"), d, d, rng);
    }
    init_linear_scaled(store, &format!("{prefix}.attn.o"), d, d, out_gain, rng);
    init_layer_norm(store, &format!("{prefix}.ln2"), d);
    init_linear(store, &format!("{prefix}.mlp.fc1"), d, shape.mlp_hidden, rng);
    init_linear_scaled(store, &format!("{prefix}.mlp.fc2"), shape.mlp_hidden, d, out_gain, rng);
}

/// `x + attn(ln1(x))`, then `x + mlp(ln2(x))`.
#[allow(clippy::too_many_arguments)]
pub fn block<T: Float>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    prefix: &str,
    x: Var,
    mask: &Rc<Mask>,
    heads: usize,
    batch: usize,
    trainable: bool,
) -> Result<Var> {
    let h = layer_norm(g, store, &format!("{prefix}.ln1"), x, trainable)?;
    let q = linear(g, store, &format!("{prefix}.attn.q"), h, trainable)?;
    let k = linear(g, store, &format!("{prefix}.attn.k"), h, trainable)?;
    let v = linear(g, store, &format!("{prefix}.attn.v"), h, trainable)?;
    let a = g.attention(q, k, v, mask, heads, batch)?;
    let a = linear(g, store, &format!("{prefix}.attn.o"), a, trainable)?;
    let x = g.add(x, a)?;
    let h = layer_norm(g, store, &format!("{prefix}.ln2"), x, trainable)?;
    let h = linear(g, store, &format!("{prefix}.mlp.fc1"), h, trainable)?;
    let h = g.gelu(h)?;
    let h = linear(g, store, &format!("{prefix}.mlp.fc2"), h, trainable)?;
    g.add(x, h)
}

/// Row indices that tile a `[rows, cols]` tensor `times` times vertically.
pub fn tile_index(rows: usize, cols: usize, times: usize) -> Rc<Vec<u32>> {
    let n = rows * cols;
    Rc::new((0..times * n).map(|i| (i % n) as u32).collect())
}

/// Index that repeats each of `rows` rows `times` times consecutively.
pub fn repeat_rows_index(rows: usize, cols: usize, times: usize) -> Rc<Vec<u32>> {
    let mut idx = Vec::with_capacity(rows * times * cols);
    for r in 0..rows {
        for _ in 0..times {
            idx.extend((r * cols..(r + 1) * cols).map(|i| i as u32));
        }
    }
    Rc::new(idx)
}
