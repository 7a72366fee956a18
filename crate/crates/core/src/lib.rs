//! Desk-scale pruning and evaluation toolkit.
//!
//! A small byte-level decoder-only transformer is trained, pruned with
//! magnitude, Wanda or SparseGPT-style one-shot pruning, and compared against
//! its dense parent with cross-entropy/perplexity, Jensen-Shannon divergence
//! over next-token distributions, EM/F1/ROUGE-1 on greedy generations and an
//! optional chat-completions judge.
//!
//! Data-parallel loops (per-sequence forward passes, Gram accumulation, sweep
//! cells) go through [`par`], which uses rayon when the `parallel` feature is
//! enabled and plain iterators otherwise. Reductions always run in a fixed
//! order, so results are bit-identical for any worker count.

pub mod data;
pub mod error;
pub mod harness;
pub mod judge;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod par;
pub mod pruning;

pub use error::{Error, Result};
pub use model::{ModelConfig, TokenId, TokenSeq, Transformer};
pub use pruning::{ActivationStats, SparsityMask};
