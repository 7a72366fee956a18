//! Evaluation metrics: cross-entropy and perplexity, KL/JS divergence,
//! EM / token-F1 / ROUGE-1, and relative change against a base value.

mod divergence;
mod lm;
mod text;

pub use divergence::{js_divergence, kl_divergence, model_js_divergence, ProbDist, KL_FLOOR};
pub use lm::{cross_entropy, dataset_cross_entropy, perplexity, NllSum};
pub use text::{exact_match, normalize_answer, rouge1_f1, token_f1};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `(value − base) / base × 100`.
pub fn relative_change(value: f64, base: f64) -> Result<f64> {
    if base == 0.0 {
        return Err(Error::ZeroBase);
    }
    Ok((value - base) / base * 100.0)
}

/// Aggregate metrics for one model on one evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub cross_entropy: f64,
    pub perplexity: f64,
    pub js_divergence: Option<f64>,
    pub em: Option<f64>,
    pub f1: Option<f64>,
    pub rouge1: Option<f64>,
    pub judge_accuracy: Option<f64>,
    pub judge_completeness: Option<f64>,
    pub judge_relevance: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_change_examples() {
        assert!((relative_change(2.7064, 2.6685).unwrap() - 1.42).abs() < 0.01);
        assert!((relative_change(6.7001, 2.6685).unwrap() - 151.1).abs() < 0.1);
        assert_eq!(relative_change(3.0, 3.0).unwrap(), 0.0);
        assert!(matches!(relative_change(1.0, 0.0), Err(Error::ZeroBase)));
    }
}
