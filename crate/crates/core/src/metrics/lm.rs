use ndarray::ArrayView2;

use crate::error::{Error, Result};
use crate::model::{log_softmax_row, TokenId, TokenSeq, Transformer, PAD};
use crate::par;

/// Summed negative log-likelihood and the number of scored positions.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NllSum {
    pub nll: f64,
    pub count: usize,
}

impl NllSum {
    pub fn mean(&self) -> Result<f64> {
        if self.count == 0 {
            Err(Error::NoValidPositions)
        } else {
            Ok(self.nll / self.count as f64)
        }
    }
}

/// Mean of `−ln p(target)` over rows whose aligned target is not PAD.
///
/// `targets[t]` is the token that row `t` of `logits` predicts.
pub fn cross_entropy(logits: ArrayView2<f32>, targets: &[TokenId]) -> Result<f64> {
    nll_sum(logits, targets).mean()
}

fn nll_sum(logits: ArrayView2<f32>, targets: &[TokenId]) -> NllSum {
    let mut acc = NllSum::default();
    for (row, &t) in logits.outer_iter().zip(targets) {
        if t == PAD || t as usize >= row.len() {
            continue;
        }
        acc.nll -= log_softmax_row(row)[t as usize];
        acc.count += 1;
    }
    acc
}

/// `exp(ce)`: cross-entropy is measured in nats.
pub fn perplexity(ce: f64) -> f64 {
    ce.exp()
}

/// Token-weighted next-token cross-entropy of a model over a dataset.
pub fn dataset_cross_entropy(model: &Transformer, seqs: &[TokenSeq]) -> Result<NllSum> {
    if seqs.is_empty() {
        return Err(Error::EmptyEvalSet);
    }
    let parts = par::map(seqs, |seq| -> Result<NllSum> {
        let n = seq.content_len();
        if n < 2 {
            return Ok(NllSum::default());
        }
        let ids = &seq.ids()[..n];
        let logits = model.forward(ids)?;
        Ok(nll_sum(logits.slice(ndarray::s![..n - 1, ..]), &ids[1..]))
    });
    let mut total = NllSum::default();
    for p in parts {
        let p = p?;
        total.nll += p.nll;
        total.count += p.count;
    }
    if total.count == 0 {
        return Err(Error::NoValidPositions);
    }
    Ok(total)
}
