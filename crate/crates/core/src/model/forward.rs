use ndarray::{s, Array1, Array2, ArrayView1, Axis};

use super::{LayerNorm, Transformer};
use crate::error::{Error, Result};
use crate::model::{TokenId, VOCAB_SIZE};

const LN_EPS: f32 = 1e-5;
const GELU_K: f32 = 0.797_884_6; // sqrt(2/pi)
const GELU_C: f32 = 0.044_715;

pub(crate) struct LnTrace {
    pub xhat: Array2<f32>,
    pub rstd: Array1<f32>,
}

/// Intermediate activations of one block, kept for backprop and for
/// calibration capture.
pub(crate) struct BlockTrace {
    pub ln1: LnTrace,
    /// Input to wq/wk/wv.
    pub attn_in: Array2<f32>,
    pub q: Array2<f32>,
    pub k: Array2<f32>,
    pub v: Array2<f32>,
    pub probs: Vec<Array2<f32>>,
    /// Input to wo.
    pub attn_concat: Array2<f32>,
    pub ln2: LnTrace,
    /// Input to the MLP up projection.
    pub mlp_in: Array2<f32>,
    pub pre_act: Array2<f32>,
    /// Input to the MLP down projection.
    pub act: Array2<f32>,
}

pub(crate) struct Trace {
    pub blocks: Vec<BlockTrace>,
    pub ln_f: LnTrace,
    pub final_hidden: Array2<f32>,
}

pub(crate) fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f32) -> f32 {
    let t = (GELU_K * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

fn layer_norm(x: &Array2<f32>, ln: &LayerNorm) -> (Array2<f32>, LnTrace) {
    let (t, d) = x.dim();
    let mut xhat = Array2::<f32>::zeros((t, d));
    let mut rstd = Array1::<f32>::zeros(t);
    for (i, row) in x.outer_iter().enumerate() {
        let mean = row.sum() / d as f32;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd[i] = r;
        for (o, v) in xhat.row_mut(i).iter_mut().zip(row.iter()) {
            *o = (v - mean) * r;
        }
    }
    let y = &xhat * &ln.weight + &ln.bias;
    (y, LnTrace { xhat, rstd })
}

/// Softmax of one logits row in f64.
pub fn softmax_row(row: ArrayView1<f32>) -> Vec<f64> {
    let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
    let mut out: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= z);
    out
}

/// Log-softmax of one logits row in f64.
pub fn log_softmax_row(row: ArrayView1<f32>) -> Vec<f64> {
    let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
    let lse = row.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln() + max;
    row.iter().map(|&v| v as f64 - lse).collect()
}

impl Transformer {
    /// Causal forward pass; returns logits of shape `(len, 259)`.
    pub fn forward(&self, tokens: &[TokenId]) -> Result<Array2<f32>> {
        self.run(tokens, false).map(|(logits, _)| logits)
    }

    pub(crate) fn forward_traced(&self, tokens: &[TokenId]) -> Result<(Array2<f32>, Trace)> {
        self.run(tokens, true)
            .map(|(logits, trace)| (logits, trace.expect("trace requested")))
    }

    fn run(&self, tokens: &[TokenId], keep: bool) -> Result<(Array2<f32>, Option<Trace>)> {
        let cfg = &self.config;
        let t = tokens.len();
        if t > cfg.max_seq_len {
            return Err(Error::SequenceTooLong {
                len: t,
                max: cfg.max_seq_len,
            });
        }
        if t == 0 {
            return Err(Error::InvalidTokens("empty sequence".into()));
        }
        if let Some(&bad) = tokens.iter().find(|&&id| id as usize >= VOCAB_SIZE) {
            return Err(Error::InvalidTokens(format!("token id {bad} out of range")));
        }
        let d = cfg.d_model;
        let hd = cfg.head_dim();
        let scale = 1.0 / (hd as f32).sqrt();

        let mut h = Array2::<f32>::zeros((t, d));
        for (i, &id) in tokens.iter().enumerate() {
            let mut row = h.row_mut(i);
            row.assign(&self.tok_emb.row(id as usize));
            row += &self.pos_emb.row(i);
        }

        let mut traces = Vec::with_capacity(if keep { self.blocks.len() } else { 0 });
        for block in &self.blocks {
            let (a, ln1) = layer_norm(&h, &block.ln1);
            let q = a.dot(&block.wq.t());
            let k = a.dot(&block.wk.t());
            let v = a.dot(&block.wv.t());
            let mut concat = Array2::<f32>::zeros((t, d));
            let mut probs = Vec::with_capacity(if keep { cfg.n_heads } else { 0 });
            for head in 0..cfg.n_heads {
                let cols = s![.., head * hd..(head + 1) * hd];
                let mut p = q.slice(cols).dot(&k.slice(cols).t());
                for (i, mut row) in p.axis_iter_mut(Axis(0)).enumerate() {
                    let mut max = f32::NEG_INFINITY;
                    for j in 0..=i {
                        row[j] *= scale;
                        max = max.max(row[j]);
                    }
                    let mut z = 0.0f32;
                    for j in 0..=i {
                        row[j] = (row[j] - max).exp();
                        z += row[j];
                    }
                    for j in 0..=i {
                        row[j] /= z;
                    }
                    for j in (i + 1)..t {
                        row[j] = 0.0;
                    }
                }
                concat.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
                if keep {
                    probs.push(p);
                }
            }
            let h_mid = &h + &concat.dot(&block.wo.t());
            let (c, ln2) = layer_norm(&h_mid, &block.ln2);
            let u = c.dot(&block.up.t());
            let g = u.mapv(gelu);
            h = &h_mid + &g.dot(&block.down.t());
            if keep {
                traces.push(BlockTrace {
                    ln1,
                    attn_in: a,
                    q,
                    k,
                    v,
                    probs,
                    attn_concat: concat,
                    ln2,
                    mlp_in: c,
                    pre_act: u,
                    act: g,
                });
            }
        }
        let (f, ln_f) = layer_norm(&h, &self.ln_f);
        let logits = f.dot(&self.lm_head.t()) + &self.lm_bias;
        let trace = keep.then(|| Trace {
            blocks: traces,
            ln_f,
            final_hidden: f,
        });
        Ok((logits, trace))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{tokenize, ModelConfig};

    fn tiny() -> Transformer {
        Transformer::new(ModelConfig {
            d_model: 16,
            n_heads: 2,
            n_layers: 2,
            d_ff: 32,
            max_seq_len: 12,
            seed: 3,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn logits_shape_and_finiteness() {
        let m = tiny();
        let toks = tokenize(b"hello");
        let logits = m.forward(toks.ids()).unwrap();
        assert_eq!(logits.dim(), (7, VOCAB_SIZE));
        assert!(logits.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn forward_is_deterministic() {
        let m = tiny();
        let toks = tokenize(b"abcdef");
        let a = m.forward(toks.ids()).unwrap();
        let b = m.forward(toks.ids()).unwrap();
        assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn causality_under_future_mutation() {
        let m = tiny();
        let a: Vec<TokenId> = tokenize(b"causal!!").0;
        for t in 0..a.len() - 1 {
            let mut b = a.clone();
            for (j, tok) in b.iter_mut().enumerate().skip(t + 1) {
                *tok = ((*tok as usize + 17 * j) % 256) as TokenId;
            }
            let la = m.forward(&a).unwrap();
            let lb = m.forward(&b).unwrap();
            for r in 0..=t {
                for (x, y) in la.row(r).iter().zip(lb.row(r).iter()) {
                    assert!((x - y).abs() <= 1e-6 * (1.0 + x.abs()), "row {r} changed when mutating > {t}");
                }
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let m = tiny();
        let logits = m.forward(tokenize(b"sum").ids()).unwrap();
        for row in logits.outer_iter() {
            let p = softmax_row(row);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            let lp = log_softmax_row(row);
            assert!((lp.iter().map(|v| v.exp()).sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_too_long() {
        let m = tiny();
        let toks = vec![65; 13];
        assert!(matches!(m.forward(&toks), Err(Error::SequenceTooLong { len: 13, max: 12 })));
    }

    #[test]
    fn gelu_grad_matches_difference() {
        for &x in &[-3.0f32, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-3;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-3);
        }
    }
}
