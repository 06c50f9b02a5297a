//! Building blocks shared by the language model and the span head.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::rng::Prng;

/// Half-width of the uniform parameter initialization.
pub const INIT_SCALE: f64 = 0.08;

/// Registers a `shape` tensor drawn from `uniform(-INIT_SCALE, INIT_SCALE)`.
pub fn init_param(store: &mut ParamStore, rng: &mut Prng, name: impl Into<String>, shape: &[usize]) -> ParamId {
    let n = shape.iter().product();
    let values = (0..n).map(|_| rng.uniform(-INIT_SCALE, INIT_SCALE)).collect();
    store.add(name, Tensor::new(shape.to_vec(), values).expect("positive dims"))
}

/// Query/key/value/output projections of one multi-head attention block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionIds {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

impl AttentionIds {
    pub fn register(store: &mut ParamStore, rng: &mut Prng, prefix: &str, dim: usize) -> Self {
        AttentionIds {
            wq: init_param(store, rng, format!("{prefix}.wq"), &[dim, dim]),
            wk: init_param(store, rng, format!("{prefix}.wk"), &[dim, dim]),
            wv: init_param(store, rng, format!("{prefix}.wv"), &[dim, dim]),
            wo: init_param(store, rng, format!("{prefix}.wo"), &[dim, dim]),
        }
    }

    pub fn ids(&self) -> [ParamId; 4] {
        [self.wq, self.wk, self.wv, self.wo]
    }
}

#[derive(Clone, Debug)]
pub struct AttentionOutput {
    pub output: Var,
    /// One `[n_queries × n_keys]` weight matrix per head.
    pub weights: Vec<Var>,
}

/// Scaled dot-product attention of `queries` over `memory`, split into
/// `heads` column blocks, concatenated and projected by `wo`.
pub fn multi_head_attention(
    g: &mut Graph,
    store: &ParamStore,
    ids: &AttentionIds,
    queries: Var,
    memory: Var,
    heads: usize,
    causal: bool,
) -> Result<AttentionOutput> {
    let dim = g.dims(queries).1;
    if heads == 0 || !dim.is_multiple_of(heads) {
        return Err(Error::contract(format!("width {dim} not divisible by {heads} heads")));
    }
    let head_dim = dim / heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let wq = g.param(store, ids.wq);
    let wk = g.param(store, ids.wk);
    let wv = g.param(store, ids.wv);
    let wo = g.param(store, ids.wo);
    let q = g.matmul(queries, wq)?;
    let k = g.matmul(memory, wk)?;
    let v = g.matmul(memory, wv)?;

    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * head_dim, (h + 1) * head_dim);
        let qh = g.slice_cols(q, lo, hi)?;
        let kh = g.slice_cols(k, lo, hi)?;
        let vh = g.slice_cols(v, lo, hi)?;
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, scale);
        let attn = if causal {
            g.softmax_rows_causal(scores)?
        } else {
            g.softmax_rows(scores)?
        };
        outs.push(g.matmul(attn, vh)?);
        weights.push(attn);
    }
    let joined = if heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
    Ok(AttentionOutput {
        output: g.matmul(joined, wo)?,
        weights,
    })
}

/// Position-wise `relu(x·w1 + b1)·w2 + b2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedForwardIds {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl FeedForwardIds {
    pub fn register(store: &mut ParamStore, rng: &mut Prng, prefix: &str, dim: usize, hidden: usize) -> Self {
        FeedForwardIds {
            w1: init_param(store, rng, format!("{prefix}.w1"), &[dim, hidden]),
            b1: init_param(store, rng, format!("{prefix}.b1"), &[hidden]),
            w2: init_param(store, rng, format!("{prefix}.w2"), &[hidden, dim]),
            b2: init_param(store, rng, format!("{prefix}.b2"), &[dim]),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w1 = g.param(store, self.w1);
        let b1 = g.param(store, self.b1);
        let w2 = g.param(store, self.w2);
        let b2 = g.param(store, self.b2);
        let h = g.matmul(x, w1)?;
        let h = g.add_row(h, b1)?;
        let h = g.relu(h);
        let o = g.matmul(h, w2)?;
        g.add_row(o, b2)
    }
}

/// Sinusoidal position table, `len × dim`, row-major:
/// `pe[p][2i] = sin(p / 10000^(2i/dim))`, `pe[p][2i+1] = cos(…)`.
pub fn positional_encoding(len: usize, dim: usize) -> Vec<f64> {
    let mut pe = vec![0.0; len * dim];
    for p in 0..len {
        for c in 0..dim {
            let pair = (c / 2) * 2;
            let angle = p as f64 / 10000f64.powf(pair as f64 / dim as f64);
            pe[p * dim + c] = if c % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}
