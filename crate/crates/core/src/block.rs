//! Pre-norm transformer block: multi-head self-attention and a GELU MLP,
//! each wrapped in a residual connection.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var, LAYER_NORM_EPS};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const INIT_STD: f64 = 0.02;
pub const MLP_RATIO: usize = 4;

pub(crate) fn init_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.truncated_normal(INIT_STD)).collect();
    Tensor::new(&[rows, cols], data).expect("finite init")
}

pub(crate) fn filled(len: usize, v: f64) -> Tensor {
    Tensor::new(&[len], vec![v; len]).expect("finite init")
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams {
    pub dim: usize,
    pub n_heads: usize,
    pub dropout_p: f64,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
    pub mlp_in: ParamId,
    pub mlp_in_bias: ParamId,
    pub mlp_out: ParamId,
    pub mlp_out_bias: ParamId,
}

impl BlockParams {
    /// Registers a freshly initialized block under `prefix` in `store`.
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        n_heads: usize,
        dropout_p: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if dim == 0 || n_heads == 0 || dim % n_heads != 0 {
            return Err(Error::Config(format!(
                "model_dim {dim} must be a positive multiple of n_heads {n_heads}"
            )));
        }
        let hidden = MLP_RATIO * dim;
        let mut mat = |store: &mut ParamStore, name: &str, r: usize, c: usize| {
            store.add(format!("{prefix}.{name}"), init_matrix(r, c, rng), true)
        };
        let wq = mat(store, "attn.wq", dim, dim);
        let wk = mat(store, "attn.wk", dim, dim);
        let wv = mat(store, "attn.wv", dim, dim);
        let wo = mat(store, "attn.wo", dim, dim);
        let mlp_in = mat(store, "mlp.w_in", dim, hidden);
        let mlp_out = mat(store, "mlp.w_out", hidden, dim);
        let vec = |store: &mut ParamStore, name: &str, len: usize, v: f64| {
            store.add(format!("{prefix}.{name}"), filled(len, v), false)
        };
        Ok(Self {
            dim,
            n_heads,
            dropout_p,
            wq,
            wk,
            wv,
            wo,
            ln1_gain: vec(store, "ln1.gain", dim, 1.0),
            ln1_bias: vec(store, "ln1.bias", dim, 0.0),
            ln2_gain: vec(store, "ln2.gain", dim, 1.0),
            ln2_bias: vec(store, "ln2.bias", dim, 0.0),
            mlp_in,
            mlp_in_bias: vec(store, "mlp.b_in", hidden, 0.0),
            mlp_out,
            mlp_out_bias: vec(store, "mlp.b_out", dim, 0.0),
        })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.n_heads
    }
}

/// Post-softmax attention of every head for one block invocation.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRecord {
    heads: Vec<Tensor>,
}

impl AttentionRecord {
    pub fn new(heads: Vec<Tensor>) -> Result<Self> {
        let t = heads
            .first()
            .map(|h| h.rows())
            .ok_or_else(|| Error::Shape("attention record without heads".into()))?;
        if heads.iter().any(|h| h.shape() != [t, t]) {
            return Err(Error::Shape("attention heads must all be T x T".into()));
        }
        Ok(Self { heads })
    }

    pub fn tokens(&self) -> usize {
        self.heads[0].rows()
    }

    pub fn heads(&self) -> &[Tensor] {
        &self.heads
    }

    /// Mean attention over heads.
    pub fn head_mean(&self) -> Tensor {
        let t = self.tokens();
        let mut out = vec![0.0; t * t];
        for h in &self.heads {
            for (o, v) in out.iter_mut().zip(h.data()) {
                *o += v;
            }
        }
        let n = self.heads.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        Tensor::new(&[t, t], out).expect("mean of finite values")
    }
}

/// Free-function form of [`AttentionRecord::head_mean`].
pub fn head_mean_attention(rec: &AttentionRecord) -> Tensor {
    rec.head_mean()
}

/// Runs one block on `tokens` (`T x d`).
pub fn block_forward<'a>(
    g: &mut Graph<'a>,
    tokens: Var,
    p: &BlockParams,
    store: &'a ParamStore,
    rng: &mut Rng,
    training: bool,
) -> Result<(Var, AttentionRecord)> {
    let (t, d) = g.dims(tokens);
    if t == 0 {
        return Err(Error::Shape("transformer block needs at least one token".into()));
    }
    if d != p.dim {
        return Err(Error::Shape(format!("block expects width {}, got {d}", p.dim)));
    }
    let par = |g: &mut Graph<'a>, id| g.param(store, id);

    let (g1, b1) = (par(g, p.ln1_gain), par(g, p.ln1_bias));
    let h = g.layer_norm(tokens, g1, b1, LAYER_NORM_EPS)?;
    let (wq, wk, wv, wo) = (par(g, p.wq), par(g, p.wk), par(g, p.wv), par(g, p.wo));
    let q = g.matmul(h, wq)?;
    let k = g.matmul(h, wk)?;
    let v = g.matmul(h, wv)?;
    let dh = p.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut head_out = Vec::with_capacity(p.n_heads);
    let mut maps = Vec::with_capacity(p.n_heads);
    for head in 0..p.n_heads {
        let qh = g.slice_cols(q, head * dh, dh)?;
        let kh = g.slice_cols(k, head * dh, dh)?;
        let vh = g.slice_cols(v, head * dh, dh)?;
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, scale)?;
        let attn = g.softmax(scores, 1)?;
        maps.push(g.tensor(attn));
        head_out.push(g.matmul(attn, vh)?);
    }
    let merged = if head_out.len() == 1 {
        head_out[0]
    } else {
        g.concat_cols(&head_out)?
    };
    let attn_out = g.matmul(merged, wo)?;
    let x = g.add(tokens, attn_out)?;

    let (g2, b2) = (par(g, p.ln2_gain), par(g, p.ln2_bias));
    let h = g.layer_norm(x, g2, b2, LAYER_NORM_EPS)?;
    let (w_in, b_in) = (par(g, p.mlp_in), par(g, p.mlp_in_bias));
    let (w_out, b_out) = (par(g, p.mlp_out), par(g, p.mlp_out_bias));
    let m = g.matmul(h, w_in)?;
    let m = g.add_row(m, b_in)?;
    let m = g.gelu(m)?;
    let m = g.matmul(m, w_out)?;
    let m = g.add_row(m, b_out)?;
    let m = g.dropout(m, p.dropout_p, rng, training)?;
    let out = g.add(x, m)?;
    Ok((out, AttentionRecord::new(maps)?))
}
