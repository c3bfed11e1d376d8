use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::{forward_rows, softmax_row, LanguageModel};
use crate::tokenizer::TokenSequence;

/// Logit rows that predict supervised tokens: `boundary-1 ..= len-2`.
pub fn supervised_rows(tokens: &TokenSequence) -> Result<std::ops::Range<usize>> {
    if tokens.boundary == 0 || tokens.boundary >= tokens.len() {
        return Err(Error::Precondition(format!(
            "boundary {} leaves no supervised tokens in a sequence of {}",
            tokens.boundary,
            tokens.len()
        )));
    }
    Ok(tokens.boundary - 1..tokens.len() - 1)
}

/// Negative log-likelihood of the output tokens, summed over positions.
///
/// Row `t-1` of `logits` predicts token `t`; rows before `boundary-1` and the
/// final row are never read.
pub fn lm_loss(logits: &Array2<f64>, tokens: &TokenSequence) -> Result<f64> {
    let rows = supervised_rows(tokens)?;
    if logits.nrows() < tokens.len() - 1 {
        return Err(Error::Precondition(format!(
            "{} logit rows cannot cover a sequence of {}",
            logits.nrows(),
            tokens.len()
        )));
    }
    Ok(rows
        .map(|r| {
            let p = softmax_row(logits.row(r));
            -p[tokens.ids[r + 1] as usize].ln()
        })
        .sum())
}

pub fn sample_loss<M: LanguageModel + ?Sized>(model: &M, tokens: &TokenSequence) -> Result<f64> {
    let rows: Vec<usize> = supervised_rows(tokens)?.collect();
    let logits = forward_rows(model, &tokens.ids[..tokens.len() - 1], &rows)?;
    Ok(logits.rows().into_iter().zip(&rows).map(|(row, &r)| -softmax_row(row)[tokens.ids[r + 1] as usize].ln()).sum())
}

/// Mean of per-sample losses.
pub fn batch_loss<M: LanguageModel + ?Sized>(model: &M, batch: &[TokenSequence]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Precondition("empty batch".into()));
    }
    let mut total = 0.0;
    for t in batch {
        total += sample_loss(model, t)?;
    }
    Ok(total / batch.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::VOCAB_SIZE;

    fn seq(ids: Vec<u32>, boundary: usize) -> TokenSequence {
        TokenSequence { ids, boundary }
    }

    #[test]
    fn uniform_logits_cost_ln_vocab() {
        let logits = Array2::zeros((2, VOCAB_SIZE));
        let loss = lm_loss(&logits, &seq(vec![256, 65, 257], 2)).unwrap();
        assert!((loss - (VOCAB_SIZE as f64).ln()).abs() < 1e-12);
        assert!((loss - 5.5568).abs() < 1e-4);
    }

    #[test]
    fn confident_logits_cost_nothing() {
        let tokens = seq(vec![256, 81, 65, 257], 2);
        let mut logits = Array2::zeros((4, VOCAB_SIZE));
        logits[[1, 65]] = 50.0;
        logits[[2, 257]] = 50.0;
        assert!(lm_loss(&logits, &tokens).unwrap() < 1e-6);
    }

    #[test]
    fn moving_boundary_adds_one_token() {
        let tokens = seq(vec![256, 10, 20, 30, 257], 3);
        let logits = Array2::from_shape_fn((5, VOCAB_SIZE), |(i, j)| ((i * 31 + j * 7) % 13) as f64 * 0.3);
        let later = lm_loss(&logits, &tokens).unwrap();
        let earlier = lm_loss(&logits, &seq(tokens.ids.clone(), 2)).unwrap();
        // reference: log-softmax of row 1 at token 20 by explicit summation
        let row = logits.row(1);
        let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
        let nll = lse - row[20];
        assert!((earlier - later - nll).abs() < 1e-12);
    }

    #[test]
    fn no_supervised_tokens_is_an_error() {
        let logits = Array2::zeros((3, VOCAB_SIZE));
        assert!(lm_loss(&logits, &seq(vec![256, 1, 2], 3)).is_err());
        assert!(lm_loss(&logits, &seq(vec![256, 1, 2], 0)).is_err());
    }
}
