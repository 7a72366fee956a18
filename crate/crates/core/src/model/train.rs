//! Minimal next-token trainer: manual backprop plus Adam.

use ndarray::{s, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forward::{gelu_grad, LnTrace, Trace};
use super::{tokenize, LayerNorm, ModelConfig, TokenId, Transformer, BOS, PAD};
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 8,
            lr: 3e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Transformer,
    /// Mean training cross-entropy (nats/token) of each step's batch.
    pub loss_curve: Vec<f64>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const CLIP_NORM: f64 = 1.0;

pub fn train_toy(config: ModelConfig, corpus: &[u8], hyper: TrainHyper) -> Result<Transformer> {
    train_toy_with_curve(config, corpus, hyper).map(|o| o.model)
}

/// Trains on random windows of the corpus.
///
/// The corpus is split into documents at blank lines; each document is
/// tokenized as `BOS .. EOS` and the token streams are concatenated. Windows of
/// `max_seq_len` tokens start at document boundaries when the corpus has
/// several documents.
pub fn train_toy_with_curve(
    config: ModelConfig,
    corpus: &[u8],
    hyper: TrainHyper,
) -> Result<TrainOutcome> {
    config.validate()?;
    let min = 10 * config.max_seq_len;
    if corpus.len() < min {
        return Err(Error::CorpusTooSmall {
            len: corpus.len(),
            min,
        });
    }
    if hyper.batch == 0 {
        return Err(Error::InvalidConfig("batch must be positive".into()));
    }
    let mut model = Transformer::new(config)?;
    if hyper.steps == 0 {
        return Ok(TrainOutcome {
            model,
            loss_curve: Vec::new(),
        });
    }

    let stream = token_stream(corpus);
    let window = config.max_seq_len;
    let last_start = stream.len() - window;
    let starts: Vec<usize> = stream
        .iter()
        .enumerate()
        .filter(|&(i, &t)| t == BOS && i <= last_start)
        .map(|(i, _)| i)
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut adam_m: Vec<Vec<f32>> = model.param_slices().iter().map(|s| vec![0.0; s.len()]).collect();
    let mut adam_v = adam_m.clone();
    let warmup = (hyper.steps / 10).clamp(1, 100);
    let mut curve = Vec::with_capacity(hyper.steps);

    for step in 0..hyper.steps {
        let windows: Vec<&[TokenId]> = (0..hyper.batch)
            .map(|_| {
                let start = if starts.len() >= 2 {
                    starts[rng.random_range(0..starts.len())]
                } else {
                    rng.random_range(0..=last_start)
                };
                &stream[start..start + window]
            })
            .collect();

        let parts = par::map(&windows, |w| sequence_gradient(&model, w));
        let mut grads = model.zeros_like();
        let mut nll = 0.0f64;
        let mut count = 0usize;
        for part in parts {
            let (g, part_nll, part_count) = part?;
            add_into(&mut grads, &g);
            nll += part_nll;
            count += part_count;
        }
        let loss = nll / count.max(1) as f64;
        let lr = schedule(hyper.lr, step, hyper.steps, warmup);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                loss,
                lr,
                batch: hyper.batch,
            });
        }
        curve.push(loss);

        let inv = 1.0 / count.max(1) as f64;
        let mut sq = 0.0f64;
        for g in grads.param_slices() {
            sq += g.iter().map(|&v| (v as f64 * inv).powi(2)).sum::<f64>();
        }
        let norm = sq.sqrt();
        let gscale = inv * if norm > CLIP_NORM { CLIP_NORM / norm } else { 1.0 };

        let t = (step + 1) as i32;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        let grad_slices = grads.param_slices();
        for (((p, g), m), v) in model
            .param_slices_mut()
            .into_iter()
            .zip(grad_slices)
            .zip(adam_m.iter_mut())
            .zip(adam_v.iter_mut())
        {
            for i in 0..p.len() {
                let gi = g[i] as f64 * gscale;
                let mi = BETA1 * m[i] as f64 + (1.0 - BETA1) * gi;
                let vi = BETA2 * v[i] as f64 + (1.0 - BETA2) * gi * gi;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let upd = lr * (mi / bc1) / ((vi / bc2).sqrt() + ADAM_EPS);
                p[i] -= upd as f32;
            }
        }
    }
    Ok(TrainOutcome {
        model,
        loss_curve: curve,
    })
}

fn schedule(base: f64, step: usize, total: usize, warmup: usize) -> f64 {
    if step < warmup {
        return base * (step + 1) as f64 / warmup as f64;
    }
    let progress = (step - warmup) as f64 / (total - warmup).max(1) as f64;
    let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
    base * (0.1 + 0.9 * cosine)
}

fn token_stream(corpus: &[u8]) -> Vec<TokenId> {
    let text = corpus;
    let mut stream = Vec::with_capacity(text.len() + 2);
    let mut start = 0;
    let mut i = 0;
    while i + 1 < text.len() {
        if text[i] == b'\n' && text[i + 1] == b'\n' {
            if i > start {
                stream.extend(tokenize(&text[start..i]).0);
            }
            while i < text.len() && text[i] == b'\n' {
                i += 1;
            }
            start = i;
        } else {
            i += 1;
        }
    }
    if start < text.len() {
        stream.extend(tokenize(&text[start..]).0);
    }
    stream
}

fn add_into(acc: &mut Transformer, g: &Transformer) {
    for (a, b) in acc.param_slices_mut().into_iter().zip(g.param_slices()) {
        a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
    }
}

/// Gradient of the summed next-token NLL of one sequence.
///
/// Returns `(grads, nll_sum, target_count)`.
pub(crate) fn sequence_gradient(
    model: &Transformer,
    tokens: &[TokenId],
) -> Result<(Transformer, f64, usize)> {
    let (logits, trace) = model.forward_traced(tokens)?;
    let t = tokens.len();
    let mut dlogits = Array2::<f32>::zeros(logits.raw_dim());
    let mut nll = 0.0f64;
    let mut count = 0usize;
    for pos in 0..t.saturating_sub(1) {
        let target = tokens[pos + 1];
        if target == PAD {
            continue;
        }
        let probs = super::softmax_row(logits.row(pos));
        nll -= probs[target as usize].max(f64::MIN_POSITIVE).ln();
        count += 1;
        let mut row = dlogits.row_mut(pos);
        for (d, p) in row.iter_mut().zip(&probs) {
            *d = *p as f32;
        }
        row[target as usize] -= 1.0;
    }
    let grads = backward(model, tokens, &trace, &dlogits);
    Ok((grads, nll, count))
}

fn ln_backward(dy: &Array2<f32>, tr: &LnTrace, ln: &LayerNorm, grad: &mut LayerNorm) -> Array2<f32> {
    let d = dy.ncols() as f32;
    grad.weight += &(dy * &tr.xhat).sum_axis(Axis(0));
    grad.bias += &dy.sum_axis(Axis(0));
    let dxhat = dy * &ln.weight;
    let mut dx = Array2::<f32>::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let dxh = dxhat.row(i);
        let xh = tr.xhat.row(i);
        let mean_d = dxh.sum() / d;
        let mean_dx = dxh.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f32>() / d;
        let r = tr.rstd[i];
        for ((o, &a), &b) in dx.row_mut(i).iter_mut().zip(dxh.iter()).zip(xh.iter()) {
            *o = r * (a - mean_d - b * mean_dx);
        }
    }
    dx
}

fn backward(model: &Transformer, tokens: &[TokenId], trace: &Trace, dlogits: &Array2<f32>) -> Transformer {
    let cfg = &model.config;
    let hd = cfg.head_dim();
    let scale = 1.0 / (hd as f32).sqrt();
    let mut g = model.zeros_like();

    g.lm_head += &dlogits.t().dot(&trace.final_hidden);
    g.lm_bias += &dlogits.sum_axis(Axis(0));
    let df = dlogits.dot(&model.lm_head);
    let mut dh = ln_backward(&df, &trace.ln_f, &model.ln_f, &mut g.ln_f);

    for (li, (block, bt)) in model.blocks.iter().zip(&trace.blocks).enumerate().rev() {
        let gb = &mut g.blocks[li];

        // MLP branch.
        gb.down += &dh.t().dot(&bt.act);
        let mut du = dh.dot(&block.down);
        du.zip_mut_with(&bt.pre_act, |d, &u| *d *= gelu_grad(u));
        gb.up += &du.t().dot(&bt.mlp_in);
        let dc = du.dot(&block.up);
        let dh_mid = &dh + &ln_backward(&dc, &bt.ln2, &block.ln2, &mut gb.ln2);

        // Attention branch.
        gb.wo += &dh_mid.t().dot(&bt.attn_concat);
        let dconcat = dh_mid.dot(&block.wo);
        let mut dq = Array2::<f32>::zeros(bt.q.raw_dim());
        let mut dk = Array2::<f32>::zeros(bt.k.raw_dim());
        let mut dv = Array2::<f32>::zeros(bt.v.raw_dim());
        for (head, p) in bt.probs.iter().enumerate() {
            let cols = s![.., head * hd..(head + 1) * hd];
            let dout = dconcat.slice(cols);
            let dp = dout.dot(&bt.v.slice(cols).t());
            dv.slice_mut(cols).assign(&p.t().dot(&dout));
            let mut ds = Array2::<f32>::zeros(p.raw_dim());
            for i in 0..p.nrows() {
                let pr = p.row(i);
                let dpr = dp.row(i);
                let dot: f32 = (0..=i).map(|j| pr[j] * dpr[j]).sum();
                let mut dsr = ds.row_mut(i);
                for j in 0..=i {
                    dsr[j] = pr[j] * (dpr[j] - dot) * scale;
                }
            }
            dq.slice_mut(cols).assign(&ds.dot(&bt.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&bt.q.slice(cols)));
        }
        gb.wq += &dq.t().dot(&bt.attn_in);
        gb.wk += &dk.t().dot(&bt.attn_in);
        gb.wv += &dv.t().dot(&bt.attn_in);
        let da = dq.dot(&block.wq) + dk.dot(&block.wk) + dv.dot(&block.wv);
        dh = dh_mid + ln_backward(&da, &bt.ln1, &block.ln1, &mut gb.ln1);
    }

    for (pos, &tok) in tokens.iter().enumerate() {
        let row = dh.row(pos);
        let mut te = g.tok_emb.row_mut(tok as usize);
        te += &row;
        let mut pe = g.pos_emb.row_mut(pos);
        pe += &row;
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_layers: 2,
            d_ff: 16,
            max_seq_len: 8,
            seed: 11,
            ..Default::default()
        }
    }

    fn loss_of(m: &Transformer, toks: &[TokenId]) -> f64 {
        let logits = m.forward(toks).unwrap();
        (0..toks.len() - 1)
            .map(|p| -super::super::log_softmax_row(logits.row(p))[toks[p + 1] as usize])
            .sum()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut model = Transformer::new(tiny_config()).unwrap();
        // Larger weights so every path carries a visible gradient.
        for s in model.param_slices_mut() {
            for (i, v) in s.iter_mut().enumerate() {
                *v += 0.05 * (((i * 7919) % 13) as f32 - 6.0) / 6.0;
            }
        }
        let toks: Vec<TokenId> = vec![BOS, 10, 200, 3, 10, 77, 5];
        let (grads, nll, count) = sequence_gradient(&model, &toks).unwrap();
        assert_eq!(count, 6);
        assert!((nll - loss_of(&model, &toks)).abs() < 1e-4);

        let analytic: Vec<Vec<f32>> = grads.param_slices().iter().map(|s| s.to_vec()).collect();
        let h = 5e-3f32;
        let mut checked = 0;
        for (ti, g) in analytic.iter().enumerate() {
            for idx in (0..g.len()).step_by((g.len() / 5).max(1)) {
                let mut plus = model.clone();
                plus.param_slices_mut()[ti][idx] += h;
                let mut minus = model.clone();
                minus.param_slices_mut()[ti][idx] -= h;
                let fd = (loss_of(&plus, &toks) - loss_of(&minus, &toks)) / (2.0 * h as f64);
                let an = g[idx] as f64;
                assert!(
                    (fd - an).abs() <= 2e-3 + 0.05 * an.abs().max(fd.abs()),
                    "tensor {ti} idx {idx}: fd {fd} vs analytic {an}"
                );
                checked += 1;
            }
        }
        assert!(checked > 50);
    }

    #[test]
    fn zero_steps_returns_seeded_init() {
        let cfg = tiny_config();
        let corpus = vec![b'a'; 200];
        let m = train_toy(cfg, &corpus, TrainHyper { steps: 0, ..Default::default() }).unwrap();
        assert_eq!(m, Transformer::new(cfg).unwrap());
    }

    #[test]
    fn corpus_too_small_is_rejected() {
        let cfg = tiny_config();
        let err = train_toy(cfg, b"short", TrainHyper::default()).unwrap_err();
        assert!(matches!(err, Error::CorpusTooSmall { len: 5, min: 80 }));
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let cfg = ModelConfig {
            d_model: 16,
            n_heads: 2,
            n_layers: 1,
            d_ff: 32,
            max_seq_len: 16,
            seed: 5,
            ..Default::default()
        };
        let corpus: Vec<u8> = b"the cat sat on the mat.\n\nthe dog sat on the log.\n\n".repeat(20);
        let hyper = TrainHyper { steps: 60, batch: 4, lr: 1e-2, seed: 9 };
        let a = train_toy_with_curve(cfg, &corpus, hyper).unwrap();
        let b = par::with_workers(3, || train_toy_with_curve(cfg, &corpus, hyper).unwrap());
        assert_eq!(a.model, b.model);
        let first = a.loss_curve[0];
        let last: f64 = a.loss_curve[a.loss_curve.len() - 5..].iter().sum::<f64>() / 5.0;
        assert!(last < first, "loss {first} -> {last}");
    }

    #[test]
    fn documents_are_split_on_blank_lines() {
        let s = token_stream(b"ab\n\ncd");
        assert_eq!(s, vec![BOS, 97, 98, super::super::EOS, BOS, 99, 100, super::super::EOS]);
    }
}
