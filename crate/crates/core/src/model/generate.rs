use super::{TokenSeq, Transformer, EOS};
use crate::error::{Error, Result};

/// Greedy decoding: appends the argmax token (lowest id on ties) until EOS or
/// `max_new` tokens. Returns prompt followed by the new tokens.
pub fn greedy_generate(model: &Transformer, prompt: &TokenSeq, max_new: usize) -> Result<TokenSeq> {
    let max = model.config.max_seq_len;
    if prompt.len() + max_new > max {
        return Err(Error::BudgetExceedsContext {
            prompt: prompt.len(),
            max_new,
            max,
        });
    }
    let mut ids = prompt.0.clone();
    for _ in 0..max_new {
        let logits = model.forward(&ids)?;
        let last = logits.row(ids.len() - 1);
        let mut best = 0usize;
        for (i, &v) in last.iter().enumerate() {
            if v > last[best] {
                best = i;
            }
        }
        ids.push(best as u32);
        if best as u32 == EOS {
            break;
        }
    }
    Ok(TokenSeq(ids))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{encode_prompt, ModelConfig};

    fn tiny() -> Transformer {
        Transformer::new(ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            d_ff: 16,
            max_seq_len: 16,
            seed: 1,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn zero_budget_leaves_prompt() {
        let p = encode_prompt(b"hey");
        assert_eq!(greedy_generate(&tiny(), &p, 0).unwrap(), p);
    }

    #[test]
    fn eos_bias_stops_immediately() {
        let mut m = tiny();
        m.lm_bias[EOS as usize] = 100.0;
        let p = encode_prompt(b"hey");
        let out = greedy_generate(&m, &p, 8).unwrap();
        assert_eq!(out.len(), p.len() + 1);
        assert_eq!(*out.0.last().unwrap(), EOS);
    }

    #[test]
    fn ties_pick_lowest_id() {
        let mut m = tiny();
        m.lm_head.fill(0.0);
        m.lm_bias.fill(0.0);
        let out = greedy_generate(&m, &encode_prompt(b"x"), 3).unwrap();
        assert_eq!(&out.0[2..], &[0, 0, 0]);
    }

    #[test]
    fn deterministic_and_budget_checked() {
        let m = tiny();
        let p = encode_prompt(b"abc");
        assert_eq!(greedy_generate(&m, &p, 6).unwrap(), greedy_generate(&m, &p, 6).unwrap());
        assert!(matches!(greedy_generate(&m, &p, 13), Err(Error::BudgetExceedsContext { .. })));
    }
}
