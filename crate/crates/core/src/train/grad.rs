use ndarray::{s, Array2, Axis, Zip};

use super::loss::supervised_rows;
use crate::error::{Error, Result};
use crate::model::{gelu_grad, softmax_row, trace_rows, AdaptedModel, LanguageModel, LoraTarget, NormTrace};
use crate::tokenizer::TokenSequence;

#[derive(Debug, Clone)]
pub struct GradOutput {
    /// Mean loss over the batch.
    pub loss: f64,
    /// One tensor per trainable parameter, in [`AdaptedModel::params`] order.
    pub grads: Vec<Array2<f64>>,
}

/// Backward through a layer norm with frozen gain.
fn norm_backward(dy: &Array2<f64>, tr: &NormTrace, gain: &ndarray::Array1<f64>) -> Array2<f64> {
    let d = dy.ncols() as f64;
    let mut dx = dy * gain;
    for ((mut row, xhat), &rstd) in dx.axis_iter_mut(Axis(0)).zip(tr.xhat.rows()).zip(tr.rstd.iter()) {
        let mean = row.sum() / d;
        let mean_x = row.iter().zip(xhat.iter()).map(|(a, b)| a * b).sum::<f64>() / d;
        Zip::from(&mut row).and(&xhat).for_each(|g, &xh| *g = rstd * (*g - mean - xh * mean_x));
    }
    dx
}

/// Gradients of one sample's loss, scaled by `weight`, accumulated into `grads`.
/// Returns the unscaled sample loss.
pub fn sample_grad(
    model: &AdaptedModel,
    tokens: &TokenSequence,
    weight: f64,
    grads: &mut [Array2<f64>],
) -> Result<f64> {
    let rows: Vec<usize> = supervised_rows(tokens)?.collect();
    let ids = &tokens.ids[..tokens.len() - 1];
    let tr = trace_rows(model, ids, Some(&rows))?;
    let base = model.base();
    let cfg = &base.config;
    let (t, d, dh) = (ids.len(), cfg.d_model, cfg.head_dim());
    let scale = 1.0 / (dh as f64).sqrt();

    // slot index of each (layer, target) in params order
    let slot_of =
        |layer: usize, target: LoraTarget| model.slots().iter().position(|s| s.layer == layer && s.target == target);

    let logits = tr.hidden.dot(&base.output.t());
    let mut loss = 0.0;
    let mut dlogits = Array2::zeros(logits.dim());
    for (i, &r) in rows.iter().enumerate() {
        let mut p = softmax_row(logits.row(i));
        let target = tokens.ids[r + 1] as usize;
        loss -= p[target].ln();
        p[target] -= 1.0;
        dlogits.row_mut(i).assign(&(p * weight));
    }
    let mut dx = norm_backward(&dlogits.dot(&base.output), &tr.final_norm, &base.final_gain);

    for (l, (w, lt)) in base.layers.iter().zip(&tr.layers).enumerate().rev() {
        let full = lt.rows.len() == t;
        // feed-forward block
        let mut d_up = dx.dot(&w.w_down);
        Zip::from(&mut d_up).and(&lt.up).for_each(|g, &u| *g *= gelu_grad(u));
        let dn2 = d_up.dot(&w.w_up);
        dx += &norm_backward(&dn2, &lt.norm2, &w.ln2_gain);

        // attention block
        let d_attn = dx.dot(&w.wo);
        let mut dq = Array2::zeros((lt.rows.len(), d));
        let mut dk = Array2::zeros((t, d));
        let mut dv = Array2::zeros((t, d));
        for (h, p) in lt.probs.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let d_out = d_attn.slice(cols);
            let mut ds = d_out.dot(&lt.v.slice(cols).t());
            dv.slice_mut(cols).assign(&p.t().dot(&d_out));
            for (mut ds_row, p_row) in ds.axis_iter_mut(Axis(0)).zip(p.rows()) {
                let dot: f64 = ds_row.iter().zip(p_row.iter()).map(|(a, b)| a * b).sum();
                Zip::from(&mut ds_row).and(&p_row).for_each(|g, &pv| *g = pv * (*g - dot) * scale);
            }
            dq.slice_mut(cols).assign(&ds.dot(&lt.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&lt.q.slice(cols)));
        }

        // gradient w.r.t. n1 at the active rows (query path) and at all rows
        let mut dn1_active = (l > 0).then(|| dq.dot(&w.wq));
        let mut dn1 = (l > 0).then(|| dk.dot(&w.wk) + dv.dot(&w.wv));
        let n1_active = if full { None } else { Some(lt.n1.select(Axis(0), &lt.rows)) };
        for (target, dy, u) in [(LoraTarget::Query, &dq, &lt.uq), (LoraTarget::Value, &dv, &lt.uv)] {
            let (Some(slot), Some(u)) = (slot_of(l, target), u.as_ref()) else { continue };
            let adapter = &model.slots()[slot].adapter;
            let s = adapter.scaling();
            let du = dy.dot(&adapter.b) * s;
            let n1 = match (target, &n1_active) {
                (LoraTarget::Query, Some(sel)) => sel,
                _ => &lt.n1,
            };
            grads[2 * slot].scaled_add(1.0, &du.t().dot(n1));
            grads[2 * slot + 1].scaled_add(s, &dy.t().dot(u));
            let dst = if target == LoraTarget::Query { &mut dn1_active } else { &mut dn1 };
            if let Some(dst) = dst {
                *dst += &du.dot(&adapter.a);
            }
        }
        if let (Some(mut dn1), Some(dn1_active)) = (dn1, dn1_active) {
            for (i, &r) in lt.rows.iter().enumerate() {
                let mut row = dn1.row_mut(r);
                row += &dn1_active.row(i);
            }
            if !full {
                let mut scattered = Array2::zeros((t, d));
                for (i, &r) in lt.rows.iter().enumerate() {
                    scattered.row_mut(r).assign(&dx.row(i));
                }
                dx = scattered;
            }
            dx += &norm_backward(&dn1, &lt.norm1, &w.ln1_gain);
        }
    }
    Ok(loss)
}

/// Exact gradients of the mean batch loss with respect to every adapter tensor.
pub fn grad(model: &AdaptedModel, batch: &[TokenSequence]) -> Result<GradOutput> {
    if batch.is_empty() {
        return Err(Error::Precondition("empty batch".into()));
    }
    let mut grads: Vec<Array2<f64>> = model.params().iter().map(|p| Array2::zeros(p.dim())).collect();
    let weight = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for tokens in batch {
        loss += sample_grad(model, tokens, weight, &mut grads)?;
    }
    Ok(GradOutput { loss: loss * weight, grads })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{attach_lora, init_model, LoraConfig, ModelConfig};
    use crate::tokenizer::VOCAB_SIZE;

    #[test]
    fn zero_b_gives_zero_a_gradient_but_nonzero_b() {
        let cfg = ModelConfig { d_model: 16, n_layers: 2, n_heads: 2, d_ff: 32, max_seq: 32, vocab: VOCAB_SIZE };
        let model =
            attach_lora(init_model(cfg, 0).unwrap(), &LoraConfig { rank: 2, ..LoraConfig::default() }, 1).unwrap();
        let tokens = TokenSequence { ids: vec![256, 72, 105, 33, 89, 257], boundary: 4 };
        let out = grad(&model, &[tokens]).unwrap();
        for (i, g) in out.grads.iter().enumerate() {
            let norm: f64 = g.iter().map(|v| v * v).sum();
            if i % 2 == 0 {
                assert_eq!(norm, 0.0);
            } else {
                assert!(norm > 0.0);
            }
        }
    }

    #[test]
    fn optimum_gives_zero_gradients() {
        let cfg = ModelConfig { d_model: 16, n_layers: 1, n_heads: 2, d_ff: 32, max_seq: 32, vocab: VOCAB_SIZE };
        let mut base = init_model(cfg, 3).unwrap();
        // constant final hidden state that only token 'a' reads
        base.final_gain.fill(0.0);
        base.final_bias.fill(0.0);
        base.final_bias[0] = 100.0;
        base.output.column_mut(0).fill(0.0);
        base.output[[97, 0]] = 1.0;
        let mut model = attach_lora(base, &LoraConfig { rank: 2, ..LoraConfig::default() }, 1).unwrap();
        for p in model.params_mut() {
            p.fill(0.3);
        }
        let tokens = TokenSequence { ids: vec![256, 120, 97, 97, 97], boundary: 2 };
        let out = grad(&model, &[tokens]).unwrap();
        assert!(out.loss < 1e-12);
        for g in &out.grads {
            assert!(g.iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn gradients_are_deterministic_and_batch_averaged() {
        let cfg = ModelConfig { d_model: 16, n_layers: 2, n_heads: 4, d_ff: 32, max_seq: 32, vocab: VOCAB_SIZE };
        let mut model = attach_lora(init_model(cfg, 0).unwrap(), &LoraConfig::default(), 2).unwrap();
        for (i, p) in model.params_mut().into_iter().enumerate() {
            p.mapv_inplace(|v| v + 0.01 * i as f64);
        }
        let t1 = TokenSequence { ids: vec![256, 72, 105, 33, 89, 257], boundary: 4 };
        let t2 = TokenSequence { ids: vec![256, 79, 104, 78, 111, 257], boundary: 3 };
        let both = grad(&model, &[t1.clone(), t2.clone()]).unwrap();
        let again = grad(&model, &[t1.clone(), t2.clone()]).unwrap();
        assert_eq!(both.loss.to_bits(), again.loss.to_bits());
        assert_eq!(both.grads, again.grads);
        let g1 = grad(&model, &[t1]).unwrap();
        let g2 = grad(&model, &[t2]).unwrap();
        assert!((both.loss - (g1.loss + g2.loss) / 2.0).abs() < 1e-12);
        for ((b, x), y) in both.grads.iter().zip(&g1.grads).zip(&g2.grads) {
            let avg = (x + y) / 2.0;
            assert!((b - &avg).iter().all(|d| d.abs() < 1e-12));
        }
    }
}
