use ndarray::{s, Array1, Array2, ArrayView1, Axis};

use super::{LanguageModel, LoraAdapter, LoraTarget};
use crate::error::{Error, Result};
use crate::tokenizer::TokenId;

pub(crate) const NORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// Normalized input and reciprocal standard deviation per row.
#[derive(Debug, Clone)]
pub struct NormTrace {
    pub xhat: Array2<f64>,
    pub rstd: Array1<f64>,
}

/// Activations of one block kept for the backward pass.
///
/// Keys, values and the first norm cover every position. Queries and
/// everything after attention cover only the block's output rows.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    /// Positions whose outputs this block computes, ascending.
    pub rows: Vec<usize>,
    pub norm1: NormTrace,
    pub n1: Array2<f64>,
    /// `(rows, d_model)`
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// `n1[rows] · Aᵀ` for the query adapter, when present.
    pub uq: Option<Array2<f64>>,
    pub uv: Option<Array2<f64>>,
    /// One causal attention matrix per head, `(rows, seq)`.
    pub probs: Vec<Array2<f64>>,
    /// Concatenated head outputs before `Wo`.
    pub attn: Array2<f64>,
    pub norm2: NormTrace,
    pub n2: Array2<f64>,
    pub up: Array2<f64>,
    pub act: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub layers: Vec<LayerTrace>,
    pub final_norm: NormTrace,
    /// Final normalized hidden states of the last block's rows.
    pub hidden: Array2<f64>,
}

fn layer_norm(x: &Array2<f64>, gain: &Array1<f64>, bias: &Array1<f64>) -> (Array2<f64>, NormTrace) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.axis_iter_mut(Axis(0)).zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *r = 1.0 / (var + NORM_EPS).sqrt();
        let rs = *r;
        row.mapv_inplace(|v| v * rs);
    }
    let y = &xhat * gain + bias;
    (y, NormTrace { xhat, rstd })
}

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

/// `x · Wᵀ (+ s · (x · Aᵀ) · Bᵀ)`, returning the low-rank intermediate too.
fn project(x: &Array2<f64>, w: &Array2<f64>, adapter: Option<&LoraAdapter>) -> (Array2<f64>, Option<Array2<f64>>) {
    let mut y = x.dot(&w.t());
    let u = adapter.map(|a| {
        let u = x.dot(&a.a.t());
        y.scaled_add(a.scaling(), &u.dot(&a.b.t()));
        u
    });
    (y, u)
}

pub(crate) fn check_ids<M: LanguageModel + ?Sized>(model: &M, ids: &[TokenId]) -> Result<()> {
    let cfg = model.config();
    if ids.is_empty() {
        return Err(Error::Precondition("cannot run the model on an empty sequence".into()));
    }
    if ids.len() > cfg.max_seq {
        return Err(Error::SequenceTooLong { len: ids.len(), max: cfg.max_seq });
    }
    if let Some(&bad) = ids.iter().find(|&&id| id as usize >= cfg.vocab) {
        return Err(Error::TokenOutOfRange { id: bad as usize, vocab: cfg.vocab });
    }
    Ok(())
}

/// Run the network and keep every activation the backward pass needs.
pub fn trace<M: LanguageModel + ?Sized>(model: &M, ids: &[TokenId]) -> Result<ForwardTrace> {
    trace_rows(model, ids, None)
}

/// As [`trace`], but the last block only computes `rows` (ascending), which
/// is all the loss and scoring read.
pub(crate) fn trace_rows<M: LanguageModel + ?Sized>(
    model: &M,
    ids: &[TokenId],
    rows: Option<&[usize]>,
) -> Result<ForwardTrace> {
    check_ids(model, ids)?;
    let base = model.base();
    let cfg = &base.config;
    let (t, d, dh) = (ids.len(), cfg.d_model, cfg.head_dim());
    let scale = 1.0 / (dh as f64).sqrt();
    if let Some(rows) = rows {
        if rows.is_empty() || rows.windows(2).any(|w| w[0] >= w[1]) || rows[rows.len() - 1] >= t {
            return Err(Error::Precondition(format!("rows {rows:?} must be ascending positions below {t}")));
        }
    }

    let mut x = Array2::zeros((t, d));
    for (i, &id) in ids.iter().enumerate() {
        let mut row = x.row_mut(i);
        row.assign(&base.token_embedding.row(id as usize));
        row += &base.position_embedding.row(i);
    }

    let mut layers = Vec::with_capacity(cfg.n_layers);
    for (l, w) in base.layers.iter().enumerate() {
        let active: Vec<usize> = match rows {
            Some(r) if l + 1 == cfg.n_layers => r.to_vec(),
            _ => (0..t).collect(),
        };
        let full = active.len() == t;
        let (n1, norm1) = layer_norm(&x, &w.ln1_gain, &w.ln1_bias);
        let n1_active = if full { n1.clone() } else { n1.select(Axis(0), &active) };
        let (q, uq) = project(&n1_active, &w.wq, model.adapter(l, LoraTarget::Query));
        let k = n1.dot(&w.wk.t());
        let (v, uv) = project(&n1, &w.wv, model.adapter(l, LoraTarget::Value));

        let mut attn = Array2::zeros((active.len(), d));
        let mut probs = Vec::with_capacity(cfg.n_heads);
        for h in 0..cfg.n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut p = q.slice(cols).dot(&k.slice(cols).t());
            for (mut row, &pos) in p.axis_iter_mut(Axis(0)).zip(&active) {
                let (mut visible, mut future) = row.view_mut().split_at(Axis(0), pos + 1);
                let max = visible.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v * scale));
                let mut sum = 0.0;
                visible.mapv_inplace(|v| {
                    let e = (v * scale - max).exp();
                    sum += e;
                    e
                });
                visible.mapv_inplace(|e| e / sum);
                future.fill(0.0);
            }
            attn.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
            probs.push(p);
        }
        let mut y = if full { x } else { x.select(Axis(0), &active) };
        y += &attn.dot(&w.wo.t());

        let (n2, norm2) = layer_norm(&y, &w.ln2_gain, &w.ln2_bias);
        let up = n2.dot(&w.w_up.t()) + &w.b_up;
        let act = up.mapv(gelu);
        y += &(act.dot(&w.w_down.t()) + &w.b_down);
        x = y;

        layers.push(LayerTrace { rows: active, norm1, n1, q, k, v, uq, uv, probs, attn, norm2, n2, up, act });
    }
    let (hidden, final_norm) = layer_norm(&x, &base.final_gain, &base.final_bias);
    Ok(ForwardTrace { layers, final_norm, hidden })
}

/// Next-token logits at every position, `(seq, vocab)`.
pub fn forward<M: LanguageModel + ?Sized>(model: &M, ids: &[TokenId]) -> Result<Array2<f64>> {
    let tr = trace(model, ids)?;
    Ok(tr.hidden.dot(&model.base().output.t()))
}

/// Logits at the listed positions only, `(rows.len(), vocab)`, in the
/// order given.
pub fn forward_rows<M: LanguageModel + ?Sized>(model: &M, ids: &[TokenId], rows: &[usize]) -> Result<Array2<f64>> {
    let mut sorted = rows.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let tr = trace_rows(model, ids, Some(&sorted))?;
    let pick: Vec<usize> = rows.iter().map(|r| sorted.binary_search(r).expect("present")).collect();
    Ok(tr.hidden.select(Axis(0), &pick).dot(&model.base().output.t()))
}

/// Numerically stable softmax of one logit row.
pub fn softmax_row(row: ArrayView1<f64>) -> Array1<f64> {
    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut e = row.mapv(|v| (v - max).exp());
    let sum = e.sum();
    e /= sum;
    e
}
