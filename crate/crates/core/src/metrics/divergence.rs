use crate::error::{Error, Result};
use crate::model::{softmax_row, TokenSeq, Transformer};
use crate::par;

/// Floor applied to `Q(i)` inside KL so zero predictions stay finite.
pub const KL_FLOOR: f64 = 1e-12;

/// A probability vector over the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbDist(Vec<f64>);

impl ProbDist {
    /// Checks non-negativity and unit mass (±1e-6).
    pub fn new(probs: Vec<f64>) -> Option<Self> {
        let ok = probs.iter().all(|&p| p >= 0.0 && p.is_finite())
            && (probs.iter().sum::<f64>() - 1.0).abs() <= 1e-6;
        ok.then_some(ProbDist(probs))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }
}

/// `Σ P(i) ln(P(i)/Q(i))` in nats, with `0·ln(0/q) = 0` and `Q` floored at
/// [`KL_FLOOR`].
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len());
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi.max(KL_FLOOR)).ln())
        .sum::<f64>()
        .max(0.0)
}

/// `½KL(P‖M) + ½KL(Q‖M)` with `M = ½(P+Q)`; symmetric, within `[0, ln 2]`.
pub fn js_divergence(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len());
    // Summing the symmetric per-entry terms keeps JS(P,Q) and JS(Q,P)
    // bit-identical.
    let mut total = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        let m = 0.5 * (pi + qi);
        let a = if pi > 0.0 { pi * (pi / m).ln() } else { 0.0 };
        let b = if qi > 0.0 { qi * (qi / m).ln() } else { 0.0 };
        total += 0.5 * (a + b);
    }
    total.clamp(0.0, std::f64::consts::LN_2)
}

/// Mean per-position JS divergence between two models' next-token
/// distributions over every non-PAD position of `eval_set`.
pub fn model_js_divergence(base: &Transformer, compressed: &Transformer, eval_set: &[TokenSeq]) -> Result<f64> {
    if eval_set.is_empty() {
        return Err(Error::EmptyEvalSet);
    }
    if base.config.d_model != compressed.config.d_model
        || base.config.n_layers != compressed.config.n_layers
        || base.config.d_ff != compressed.config.d_ff
        || base.config.max_seq_len != compressed.config.max_seq_len
        || base.config.n_heads != compressed.config.n_heads
    {
        return Err(Error::ShapeMismatch {
            name: "model config".into(),
            expected: vec![base.config.d_model, base.config.n_layers, base.config.d_ff],
            actual: vec![compressed.config.d_model, compressed.config.n_layers, compressed.config.d_ff],
        });
    }
    let parts = par::map(eval_set, |seq| -> Result<(f64, usize)> {
        let n = seq.content_len();
        if n == 0 {
            return Ok((0.0, 0));
        }
        let ids = &seq.ids()[..n];
        let a = base.forward(ids)?;
        let b = compressed.forward(ids)?;
        let mut sum = 0.0;
        for (ra, rb) in a.outer_iter().zip(b.outer_iter()) {
            sum += js_divergence(&softmax_row(ra), &softmax_row(rb));
        }
        Ok((sum, n))
    });
    let mut sum = 0.0;
    let mut count = 0usize;
    for p in parts {
        let (s, c) = p?;
        sum += s;
        count += c;
    }
    if count == 0 {
        return Err(Error::NoValidPositions);
    }
    Ok(sum / count as f64)
}
