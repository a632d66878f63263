//! Layers over a [`ParamStore`]. Each layer holds parameter ids; the values
//! live in the store and are bound to a graph per forward pass.

use super::graph::{Graph, Var};
use super::ops::{attention, AttentionMask};
use super::params::{Bound, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{bail, Result};
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut SimRng) -> Self {
        let weight = store.add_glorot(format!("{name}.weight"), in_dim, out_dim, rng);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]));
        Self { weight, bias, in_dim, out_dim }
    }

    pub fn zeros(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let weight = store.add(format!("{name}.weight"), Tensor::zeros(&[in_dim, out_dim]));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]));
        Self { weight, bias, in_dim, out_dim }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let s = g.shape(x);
        if s.len() != 2 || s[1] != self.in_dim {
            bail!(Shape, "linear expects [n, {}], got {:?}", self.in_dim, s);
        }
        let y = g.matmul(x, p.var(self.weight));
        Ok(g.add_row(y, p.var(self.bias)))
    }
}

/// Multi-layer perceptron: ReLU on hidden layers, linear output.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activations: Vec<Activation>,
}

impl Mlp {
    /// `dims = [in, hidden.., out]`.
    pub fn new(store: &mut ParamStore, name: &str, dims: &[usize], rng: &mut SimRng) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least one layer");
        let n = dims.len() - 1;
        let layers = (0..n).map(|i| Linear::new(store, &format!("{name}.{i}"), dims[i], dims[i + 1], rng)).collect();
        let activations = (0..n).map(|i| if i + 1 < n { Activation::Relu } else { Activation::Linear }).collect();
        Self { layers, activations }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        mlp_forward(g, p, x, self)
    }
}

pub fn mlp_forward(g: &mut Graph, p: &Bound, x: Var, mlp: &Mlp) -> Result<Var> {
    let mut h = x;
    for (layer, act) in mlp.layers.iter().zip(&mlp.activations) {
        h = layer.forward(g, p, h)?;
        if *act == Activation::Relu {
            h = g.relu(h);
        }
    }
    Ok(h)
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(&[dim], 1.0));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[dim]));
        Self { gamma, beta }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let n = g.layer_norm_rows(x, Self::EPS);
        let s = g.mul_row(n, p.var(self.gamma));
        g.add_row(s, p.var(self.beta))
    }
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut SimRng) -> Self {
        assert!(heads > 0 && dim.is_multiple_of(heads), "dim {dim} not divisible by {heads} heads");
        Self {
            query: Linear::new(store, &format!("{name}.q"), dim, dim, rng),
            key: Linear::new(store, &format!("{name}.k"), dim, dim, rng),
            value: Linear::new(store, &format!("{name}.v"), dim, dim, rng),
            output: Linear::new(store, &format!("{name}.o"), dim, dim, rng),
            heads,
        }
    }

    /// `queries` attend over `keys` (positions) and `values`.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        queries: Var,
        keys: Var,
        values: Var,
        mask: Option<&AttentionMask>,
    ) -> Result<Var> {
        let q = self.query.forward(g, p, queries)?;
        let k = self.key.forward(g, p, keys)?;
        let v = self.value.forward(g, p, values)?;
        let dim = self.query.out_dim;
        let hd = dim / self.heads;
        let out = if self.heads == 1 {
            attention(g, q, k, v, mask)?
        } else {
            let mut per_head = Vec::with_capacity(self.heads);
            for h in 0..self.heads {
                let qh = g.slice_cols(q, h * hd, (h + 1) * hd);
                let kh = g.slice_cols(k, h * hd, (h + 1) * hd);
                let vh = g.slice_cols(v, h * hd, (h + 1) * hd);
                per_head.push(attention(g, qh, kh, vh, mask)?);
            }
            g.concat_cols(&per_head)
        };
        self.output.forward(g, p, out)
    }
}

/// Pre-norm transformer encoder layer:
/// `x += MHA(LN(x)); x += FFN(LN(x))`.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub norm1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ffn: Mlp,
}

impl EncoderLayer {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, ffn_dim: usize, rng: &mut SimRng) -> Self {
        Self {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dim),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), dim, heads, rng),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim),
            ffn: Mlp::new(store, &format!("{name}.ffn"), &[dim, ffn_dim, dim], rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, mask: Option<&AttentionMask>) -> Result<Var> {
        let h = self.norm1.forward(g, p, x);
        let a = self.attn.forward(g, p, h, h, h, mask)?;
        let x = g.add(x, a);
        let h = self.norm2.forward(g, p, x);
        let f = self.ffn.forward(g, p, h)?;
        Ok(g.add(x, f))
    }
}
