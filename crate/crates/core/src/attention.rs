//! Scaled dot-product attention, its fixed-window variants, and the
//! residual / layer-norm / feed-forward block that follows attention.

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, ParamId, ParamStore, Var};
use crate::init;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Query/key/value projections of one attention block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub num_heads: usize,
}

impl AttentionParams {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        prefix: &str,
        dim: usize,
        num_heads: usize,
    ) -> Result<Self> {
        if num_heads == 0 || !dim.is_multiple_of(num_heads) {
            return Err(Error::config(
                "model.num_heads",
                format!("{num_heads} heads do not divide feature dim {dim}"),
            ));
        }
        Ok(Self {
            w_q: store.add(format!("{prefix}.w_q"), init::xavier(rng, dim, dim)),
            w_k: store.add(format!("{prefix}.w_k"), init::xavier(rng, dim, dim)),
            w_v: store.add(format!("{prefix}.w_v"), init::xavier(rng, dim, dim)),
            num_heads,
        })
    }
}

/// Allowed query/key pairs for a window of radius `radius`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowMask {
    pub len: usize,
    pub radius: usize,
    pub allowed: Array2<bool>,
}

impl WindowMask {
    pub fn allowed_keys(&self, query: usize) -> Vec<usize> {
        (0..self.len).filter(|&k| self.allowed[[query, k]]).collect()
    }
}

/// `allowed[t][s] ⇔ |t − s| ≤ radius`, truncated at the sequence edges.
pub fn build_window_mask(len: usize, radius: usize) -> WindowMask {
    let allowed = Array2::from_shape_fn((len, len), |(t, s)| t.abs_diff(s) <= radius);
    WindowMask {
        len,
        radius,
        allowed,
    }
}

/// `softmax(q kᵀ / √d_m) v`, optionally restricted by `mask`, split over heads.
pub fn attend(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<&Array2<bool>>,
    num_heads: usize,
) -> Result<Var> {
    let (tq, dq) = g.shape(q);
    let (tk, dk) = g.shape(k);
    let (tv, dv) = g.shape(v);
    if dq != dk || tk != tv {
        return Err(Error::Shape(format!(
            "attention q {tq}x{dq}, k {tk}x{dk}, v {tv}x{dv}"
        )));
    }
    if num_heads == 0 || dq % num_heads != 0 || dv % num_heads != 0 {
        return Err(Error::Shape(format!(
            "{num_heads} heads do not divide widths {dq}/{dv}"
        )));
    }
    if num_heads == 1 {
        return attend_head(g, q, k, v, mask);
    }
    let (hq, hv) = (dq / num_heads, dv / num_heads);
    let mut outs = Vec::with_capacity(num_heads);
    for h in 0..num_heads {
        let qh = g.slice_cols(q, h * hq, hq);
        let kh = g.slice_cols(k, h * hq, hq);
        let vh = g.slice_cols(v, h * hv, hv);
        outs.push(attend_head(g, qh, kh, vh, mask)?);
    }
    Ok(g.concat_cols(&outs))
}

fn attention_scores(g: &mut Graph, q: Var, k: Var, mask: Option<&Array2<bool>>) -> Result<Var> {
    let d_m = g.cols(q) as f64;
    let kt = g.transpose(k);
    let s = g.matmul(q, kt);
    let s = g.scale(s, 1.0 / d_m.sqrt());
    g.softmax_rows(s, mask)
}

fn attend_head(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<&Array2<bool>>,
) -> Result<Var> {
    let w = attention_scores(g, q, k, mask)?;
    Ok(g.matmul(w, v))
}

/// Plain-matrix scaled dot-product attention (single head).
pub fn scaled_dot_attention(
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    mask: Option<&Array2<bool>>,
) -> Result<Array2<f64>> {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let (q, k, v) = (
        g.constant(q.clone()),
        g.constant(k.clone()),
        g.constant(v.clone()),
    );
    let out = attend(&mut g, q, k, v, mask, 1)?;
    Ok(g.value(out).clone())
}

/// The row-stochastic weight matrix of single-head attention.
pub fn attention_weights(
    q: &Array2<f64>,
    k: &Array2<f64>,
    mask: Option<&Array2<bool>>,
) -> Result<Array2<f64>> {
    if q.ncols() != k.ncols() {
        return Err(Error::Shape(format!(
            "query width {} vs key width {}",
            q.ncols(),
            k.ncols()
        )));
    }
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let (q, k) = (g.constant(q.clone()), g.constant(k.clone()));
    let w = attention_scores(&mut g, q, k, mask)?;
    Ok(g.value(w).clone())
}

/// Self-attention where segment `t` only sees segments within `radius`.
pub fn windowed_self_attention(
    g: &mut Graph,
    f: Var,
    radius: usize,
    p: &AttentionParams,
) -> Result<Var> {
    windowed_cross_modal_attention(g, f, f, radius, p)
}

/// Queries from `f_query`, keys and values from the window of `f_context`.
pub fn windowed_cross_modal_attention(
    g: &mut Graph,
    f_query: Var,
    f_context: Var,
    radius: usize,
    p: &AttentionParams,
) -> Result<Var> {
    let n = g.rows(f_query);
    if g.rows(f_context) != n {
        return Err(Error::Shape(format!(
            "cross-modal attention over {} query and {} context segments",
            n,
            g.rows(f_context)
        )));
    }
    let mask = build_window_mask(n, radius);
    let wq = g.param(p.w_q);
    let wk = g.param(p.w_k);
    let wv = g.param(p.w_v);
    let q = g.matmul(f_query, wq);
    let k = g.matmul(f_context, wk);
    let v = g.matmul(f_context, wv);
    attend(g, q, k, v, Some(&mask.allowed), p.num_heads)
}

/// `gain ⊙ standardise(x) + bias`, row by row.
pub fn layer_norm(g: &mut Graph, x: Var, gain: ParamId, bias: ParamId) -> Var {
    let n = g.layer_norm_rows(x, LAYER_NORM_EPS);
    let gain = g.param(gain);
    let bias = g.param(bias);
    let scaled = g.mul_row(n, gain);
    g.add_row(scaled, bias)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PostAttentionParams {
    pub norm1_gain: ParamId,
    pub norm1_bias: ParamId,
    pub ffn_w1: ParamId,
    pub ffn_b1: ParamId,
    pub ffn_w2: ParamId,
    pub ffn_b2: ParamId,
    pub norm2_gain: ParamId,
    pub norm2_bias: ParamId,
    pub dropout: f64,
}

impl PostAttentionParams {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        prefix: &str,
        dim: usize,
        hidden: usize,
        dropout: f64,
    ) -> Self {
        Self {
            norm1_gain: store.add(format!("{prefix}.norm1.gain"), init::ones_row(dim)),
            norm1_bias: store.add(format!("{prefix}.norm1.bias"), init::zeros_row(dim)),
            ffn_w1: store.add(format!("{prefix}.ffn.w1"), init::xavier(rng, dim, hidden)),
            ffn_b1: store.add(format!("{prefix}.ffn.b1"), init::zeros_row(hidden)),
            ffn_w2: store.add(format!("{prefix}.ffn.w2"), init::xavier(rng, hidden, dim)),
            ffn_b2: store.add(format!("{prefix}.ffn.b2"), init::zeros_row(dim)),
            norm2_gain: store.add(format!("{prefix}.norm2.gain"), init::ones_row(dim)),
            norm2_bias: store.add(format!("{prefix}.norm2.bias"), init::zeros_row(dim)),
            dropout,
        }
    }
}

/// Residual + layer norm around the attention output, then a position-wise
/// feed-forward layer with its own residual + layer norm.
pub fn post_attention_block(
    g: &mut Graph,
    f_in: Var,
    f_att: Var,
    p: &PostAttentionParams,
) -> Result<Var> {
    if g.shape(f_in) != g.shape(f_att) {
        return Err(Error::Shape(format!(
            "post-attention block input {:?} vs attention {:?}",
            g.shape(f_in),
            g.shape(f_att)
        )));
    }
    let sum = g.add(f_in, f_att);
    let x = layer_norm(g, sum, p.norm1_gain, p.norm1_bias);
    let h = g.linear(x, p.ffn_w1, p.ffn_b1);
    let h = g.relu(h);
    let h = g.dropout(h, p.dropout);
    let y = g.linear(h, p.ffn_w2, p.ffn_b2);
    let sum = g.add(x, y);
    Ok(layer_norm(g, sum, p.norm2_gain, p.norm2_bias))
}
