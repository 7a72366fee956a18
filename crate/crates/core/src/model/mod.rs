//! Byte-level decoder-only transformer.
//!
//! Linear weights are stored `[out, in]` so a layer computes `y = W x`; the
//! pruning code treats rows as outputs and columns as input features.

mod capture;
pub mod checkpoint;
mod forward;
mod generate;
pub mod train;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use capture::capture_layer_inputs;
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use forward::{log_softmax_row, softmax_row};
pub use generate::greedy_generate;
pub use train::{train_toy, train_toy_with_curve, TrainHyper, TrainOutcome};

pub type TokenId = u32;

pub const BYTE_VOCAB: usize = 256;
pub const BOS: TokenId = 256;
pub const EOS: TokenId = 257;
pub const PAD: TokenId = 258;
pub const VOCAB_SIZE: usize = 259;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: VOCAB_SIZE,
            d_model: 128,
            n_layers: 4,
            n_heads: 4,
            d_ff: 512,
            max_seq_len: 256,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.vocab_size != VOCAB_SIZE {
            return bad(format!("vocab_size must be {VOCAB_SIZE}, got {}", self.vocab_size));
        }
        if self.d_model == 0 || self.n_heads == 0 || self.n_layers == 0 || self.d_ff == 0 {
            return bad("d_model, n_heads, n_layers and d_ff must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.max_seq_len < 2 {
            return bad("max_seq_len must be at least 2".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Token ids for one sequence; PAD may only appear as a trailing suffix.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct TokenSeq(pub Vec<TokenId>);

impl TokenSeq {
    pub fn new(ids: Vec<TokenId>) -> Result<Self> {
        let seq = TokenSeq(ids);
        seq.validate(usize::MAX)?;
        Ok(seq)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.0
    }

    /// Number of leading non-PAD tokens.
    pub fn content_len(&self) -> usize {
        self.0.iter().position(|&t| t == PAD).unwrap_or(self.0.len())
    }

    pub fn validate(&self, max_len: usize) -> Result<()> {
        if self.0.len() > max_len {
            return Err(Error::SequenceTooLong {
                len: self.0.len(),
                max: max_len,
            });
        }
        if let Some(&bad) = self.0.iter().find(|&&t| t as usize >= VOCAB_SIZE) {
            return Err(Error::InvalidTokens(format!("token id {bad} out of range")));
        }
        let content = self.content_len();
        if self.0[content..].iter().any(|&t| t != PAD) {
            return Err(Error::InvalidTokens("PAD is only allowed as a trailing suffix".into()));
        }
        Ok(())
    }

    /// Keeps the first `max_len` tokens.
    pub fn truncated(mut self, max_len: usize) -> Self {
        self.0.truncate(max_len);
        self
    }
}

/// `[BOS] ++ bytes ++ [EOS]`.
pub fn tokenize(text: &[u8]) -> TokenSeq {
    let mut ids = Vec::with_capacity(text.len() + 2);
    ids.push(BOS);
    ids.extend(text.iter().map(|&b| b as TokenId));
    ids.push(EOS);
    TokenSeq(ids)
}

/// `[BOS] ++ bytes`, for prompts that generation continues.
pub fn encode_prompt(text: &[u8]) -> TokenSeq {
    let mut ids = Vec::with_capacity(text.len() + 1);
    ids.push(BOS);
    ids.extend(text.iter().map(|&b| b as TokenId));
    TokenSeq(ids)
}

/// Drops special tokens and returns the raw bytes.
pub fn detokenize(ids: &[TokenId]) -> Vec<u8> {
    ids.iter()
        .filter(|&&t| (t as usize) < BYTE_VOCAB)
        .map(|&t| t as u8)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LinearKind {
    Query,
    Key,
    Value,
    Output,
    Up,
    Down,
}

impl LinearKind {
    pub const ALL: [LinearKind; 6] = [
        LinearKind::Query,
        LinearKind::Key,
        LinearKind::Value,
        LinearKind::Output,
        LinearKind::Up,
        LinearKind::Down,
    ];

    fn suffix(self) -> &'static str {
        match self {
            LinearKind::Query => "attn.wq",
            LinearKind::Key => "attn.wk",
            LinearKind::Value => "attn.wv",
            LinearKind::Output => "attn.wo",
            LinearKind::Up => "mlp.up",
            LinearKind::Down => "mlp.down",
        }
    }
}

/// Identifies one prunable matrix, e.g. `blocks.0.attn.wq`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinearId {
    pub layer: usize,
    pub kind: LinearKind,
}

impl fmt::Display for LinearId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "blocks.{}.{}", self.layer, self.kind.suffix())
    }
}

impl FromStr for LinearId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::MalformedCheckpoint(format!("not a prunable weight name: {s}"));
        let rest = s.strip_prefix("blocks.").ok_or_else(bad)?;
        let (layer, suffix) = rest.split_once('.').ok_or_else(bad)?;
        let layer = layer.parse().map_err(|_| bad())?;
        let kind = LinearKind::ALL
            .into_iter()
            .find(|k| k.suffix() == suffix)
            .ok_or_else(bad)?;
        Ok(LinearId { layer, kind })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub weight: Array1<f32>,
    pub bias: Array1<f32>,
}

impl LayerNorm {
    fn new(dim: usize) -> Self {
        Self {
            weight: Array1::ones(dim),
            bias: Array1::zeros(dim),
        }
    }

    fn zeros(dim: usize) -> Self {
        Self {
            weight: Array1::zeros(dim),
            bias: Array1::zeros(dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln1: LayerNorm,
    pub wq: Array2<f32>,
    pub wk: Array2<f32>,
    pub wv: Array2<f32>,
    pub wo: Array2<f32>,
    pub ln2: LayerNorm,
    pub up: Array2<f32>,
    pub down: Array2<f32>,
}

impl Block {
    fn linear(&self, kind: LinearKind) -> &Array2<f32> {
        match kind {
            LinearKind::Query => &self.wq,
            LinearKind::Key => &self.wk,
            LinearKind::Value => &self.wv,
            LinearKind::Output => &self.wo,
            LinearKind::Up => &self.up,
            LinearKind::Down => &self.down,
        }
    }

    fn linear_mut(&mut self, kind: LinearKind) -> &mut Array2<f32> {
        match kind {
            LinearKind::Query => &mut self.wq,
            LinearKind::Key => &mut self.wk,
            LinearKind::Value => &mut self.wv,
            LinearKind::Output => &mut self.wo,
            LinearKind::Up => &mut self.up,
            LinearKind::Down => &mut self.down,
        }
    }
}

/// Pre-norm decoder with learned positional embeddings and a GELU MLP.
///
/// Embeddings, norms and the output head are not prunable; the attention
/// q/k/v/o and MLP up/down matrices are.
#[derive(Debug, Clone, PartialEq)]
pub struct Transformer {
    pub config: ModelConfig,
    pub tok_emb: Array2<f32>,
    pub pos_emb: Array2<f32>,
    pub blocks: Vec<Block>,
    pub ln_f: LayerNorm,
    pub lm_head: Array2<f32>,
    pub lm_bias: Array1<f32>,
}

impl Transformer {
    /// Seeded initialization from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let std = 0.02f32;
        let resid_std = std / (2.0 * config.n_layers as f32).sqrt();
        let mut normal = |rows: usize, cols: usize, sd: f32| {
            let dist = Normal::new(0.0f32, sd).expect("positive std");
            Array2::from_shape_fn((rows, cols), |_| dist.sample(&mut rng))
        };
        let d = config.d_model;
        let tok_emb = normal(VOCAB_SIZE, d, std);
        let pos_emb = normal(config.max_seq_len, d, std);
        let blocks = (0..config.n_layers)
            .map(|_| Block {
                ln1: LayerNorm::new(d),
                wq: normal(d, d, std),
                wk: normal(d, d, std),
                wv: normal(d, d, std),
                wo: normal(d, d, resid_std),
                ln2: LayerNorm::new(d),
                up: normal(config.d_ff, d, std),
                down: normal(d, config.d_ff, resid_std),
            })
            .collect();
        let lm_head = normal(VOCAB_SIZE, d, std);
        Ok(Self {
            config,
            tok_emb,
            pos_emb,
            blocks,
            ln_f: LayerNorm::new(d),
            lm_head,
            lm_bias: Array1::zeros(VOCAB_SIZE),
        })
    }

    /// Same shapes, every parameter zero. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let d = self.config.d_model;
        let z = |a: &Array2<f32>| Array2::zeros(a.raw_dim());
        Self {
            config: self.config,
            tok_emb: z(&self.tok_emb),
            pos_emb: z(&self.pos_emb),
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    ln1: LayerNorm::zeros(d),
                    wq: z(&b.wq),
                    wk: z(&b.wk),
                    wv: z(&b.wv),
                    wo: z(&b.wo),
                    ln2: LayerNorm::zeros(d),
                    up: z(&b.up),
                    down: z(&b.down),
                })
                .collect(),
            ln_f: LayerNorm::zeros(d),
            lm_head: z(&self.lm_head),
            lm_bias: Array1::zeros(VOCAB_SIZE),
        }
    }

    /// All prunable matrices in layer order.
    pub fn linear_ids(&self) -> Vec<LinearId> {
        (0..self.blocks.len())
            .flat_map(|layer| LinearKind::ALL.into_iter().map(move |kind| LinearId { layer, kind }))
            .collect()
    }

    pub fn linear(&self, id: LinearId) -> &Array2<f32> {
        self.blocks[id.layer].linear(id.kind)
    }

    pub fn linear_mut(&mut self, id: LinearId) -> &mut Array2<f32> {
        self.blocks[id.layer].linear_mut(id.kind)
    }

    /// Visits every parameter tensor as `(name, shape, data)` in a fixed
    /// order. `prunable` is true for the attention and MLP matrices.
    pub fn visit_tensors(&self, mut f: impl FnMut(&str, &[usize], &[f32], bool)) {
        let mut emit2 = |name: &str, a: &Array2<f32>, prunable: bool| {
            f(name, a.shape(), a.as_slice().expect("standard layout"), prunable)
        };
        emit2("tok_emb", &self.tok_emb, false);
        emit2("pos_emb", &self.pos_emb, false);
        for (i, b) in self.blocks.iter().enumerate() {
            for kind in LinearKind::ALL {
                let id = LinearId { layer: i, kind };
                emit2(&id.to_string(), b.linear(kind), true);
            }
        }
        emit2("lm_head.weight", &self.lm_head, false);
        drop(emit2);
        for (i, b) in self.blocks.iter().enumerate() {
            for (tag, ln) in [("ln1", &b.ln1), ("ln2", &b.ln2)] {
                f(&format!("blocks.{i}.{tag}.weight"), ln.weight.shape(), ln.weight.as_slice().unwrap(), false);
                f(&format!("blocks.{i}.{tag}.bias"), ln.bias.shape(), ln.bias.as_slice().unwrap(), false);
            }
        }
        f("ln_f.weight", self.ln_f.weight.shape(), self.ln_f.weight.as_slice().unwrap(), false);
        f("ln_f.bias", self.ln_f.bias.shape(), self.ln_f.bias.as_slice().unwrap(), false);
        f("lm_head.bias", self.lm_bias.shape(), self.lm_bias.as_slice().unwrap(), false);
    }

    /// Mutable slices of every parameter, in the same order as
    /// [`Transformer::visit_tensors`].
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out: Vec<&mut [f32]> = Vec::new();
        out.push(self.tok_emb.as_slice_mut().unwrap());
        out.push(self.pos_emb.as_slice_mut().unwrap());
        let mut norms: Vec<&mut [f32]> = Vec::new();
        for b in self.blocks.iter_mut() {
            let Block { ln1, wq, wk, wv, wo, ln2, up, down } = b;
            for m in [wq, wk, wv, wo, up, down] {
                out.push(m.as_slice_mut().unwrap());
            }
            norms.push(ln1.weight.as_slice_mut().unwrap());
            norms.push(ln1.bias.as_slice_mut().unwrap());
            norms.push(ln2.weight.as_slice_mut().unwrap());
            norms.push(ln2.bias.as_slice_mut().unwrap());
        }
        out.push(self.lm_head.as_slice_mut().unwrap());
        out.extend(norms);
        out.push(self.ln_f.weight.as_slice_mut().unwrap());
        out.push(self.ln_f.bias.as_slice_mut().unwrap());
        out.push(self.lm_bias.as_slice_mut().unwrap());
        out
    }

    pub fn param_slices(&self) -> Vec<&[f32]> {
        let mut out: Vec<&[f32]> = vec![
            self.tok_emb.as_slice().unwrap(),
            self.pos_emb.as_slice().unwrap(),
        ];
        for b in &self.blocks {
            for kind in LinearKind::ALL {
                out.push(b.linear(kind).as_slice().unwrap());
            }
        }
        out.push(self.lm_head.as_slice().unwrap());
        for b in &self.blocks {
            for ln in [&b.ln1, &b.ln2] {
                out.push(ln.weight.as_slice().unwrap());
                out.push(ln.bias.as_slice().unwrap());
            }
        }
        out.push(self.ln_f.weight.as_slice().unwrap());
        out.push(self.ln_f.bias.as_slice().unwrap());
        out.push(self.lm_bias.as_slice().unwrap());
        out
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit_tensors(|_, _, data, _| n += data.len());
        n
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit_tensors(|_, _, data, _| ok &= data.iter().all(|v| v.is_finite()));
        ok
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize(b"").0, vec![256, 257]);
        assert_eq!(tokenize(b"Hi").0, vec![256, 72, 105, 257]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn detokenize_inverts_tokenize(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
            prop_assert_eq!(detokenize(tokenize(&bytes).ids()), bytes);
        }
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let mut c = ModelConfig::default();
        c.n_heads = 3;
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
        let mut c = ModelConfig::default();
        c.vocab_size = 300;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.max_seq_len = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn pad_only_trailing() {
        assert!(TokenSeq::new(vec![BOS, 65, PAD, PAD]).is_ok());
        assert!(TokenSeq::new(vec![BOS, PAD, 65]).is_err());
        assert!(TokenSeq::new(vec![300]).is_err());
        assert_eq!(TokenSeq(vec![BOS, 65, PAD]).content_len(), 2);
    }

    #[test]
    fn linear_names_round_trip() {
        let m = Transformer::new(ModelConfig { d_model: 8, n_heads: 2, n_layers: 2, d_ff: 16, max_seq_len: 8, ..Default::default() }).unwrap();
        for id in m.linear_ids() {
            assert_eq!(id.to_string().parse::<LinearId>().unwrap(), id);
        }
        assert_eq!(m.linear_ids()[0].to_string(), "blocks.0.attn.wq");
        assert!("lm_head.weight".parse::<LinearId>().is_err());
    }

    #[test]
    fn param_orders_agree() {
        let mut m = Transformer::new(ModelConfig { d_model: 8, n_heads: 2, n_layers: 2, d_ff: 16, max_seq_len: 8, ..Default::default() }).unwrap();
        let mut lens = Vec::new();
        m.visit_tensors(|_, _, d, _| lens.push(d.len()));
        let mut_lens: Vec<usize> = m.param_slices_mut().iter().map(|s| s.len()).collect();
        assert_eq!(lens, mut_lens);
        assert_eq!(m.param_slices().len(), lens.len());
    }
}
