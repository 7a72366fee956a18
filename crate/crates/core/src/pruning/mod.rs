//! One-shot unstructured pruning: magnitude, Wanda and SparseGPT-style OBS
//! compensation, plus a least-squares oracle and mask utilities.

mod magnitude;
mod mask;
mod oracle;
mod sparsegpt;
mod stats;
mod wanda;

pub use magnitude::{magnitude_mask, magnitude_prune};
pub use mask::{apply_mask, load_mask, measure_sparsity, save_mask, MatrixMask, SparsityMask};
pub use oracle::masked_least_squares_oracle;
pub use sparsegpt::{sparsegpt_matrix, sparsegpt_prune, HessianState, SparseGptOptions};
pub use stats::{ActivationStats, LayerStats};
pub use wanda::{wanda_mask, wanda_prune};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Transformer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Magnitude,
    Sparsegpt,
    Wanda,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Magnitude => "magnitude",
            Method::Sparsegpt => "sparsegpt",
            Method::Wanda => "wanda",
        }
    }

    pub fn needs_calibration(self) -> bool {
        !matches!(self, Method::Magnitude)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "magnitude" => Ok(Method::Magnitude),
            "sparsegpt" => Ok(Method::Sparsegpt),
            "wanda" => Ok(Method::Wanda),
            other => Err(Error::Config(format!("unknown pruning method {other:?}"))),
        }
    }
}

/// Prunes `model` with `method`. Calibration-based methods need `stats`.
/// Returns the mask and the pruned model.
pub fn prune(
    model: &Transformer,
    method: Method,
    sparsity: f64,
    stats: Option<&ActivationStats>,
    opts: SparseGptOptions,
) -> Result<(SparsityMask, Transformer)> {
    let needs = || Error::MissingStats(format!("{method} (calibration data required)"));
    match method {
        Method::Magnitude => {
            let mask = magnitude_prune(model, sparsity)?;
            let pruned = apply_mask(model, &mask)?;
            Ok((mask, pruned))
        }
        Method::Wanda => {
            let mask = wanda_prune(model, stats.ok_or_else(needs)?, sparsity)?;
            let pruned = apply_mask(model, &mask)?;
            Ok((mask, pruned))
        }
        Method::Sparsegpt => sparsegpt_prune(model, stats.ok_or_else(needs)?, sparsity, opts),
    }
}

pub(crate) fn check_sparsity(sparsity: f64) -> Result<()> {
    if (0.0..1.0).contains(&sparsity) {
        Ok(())
    } else {
        Err(Error::SparsityOutOfRange(sparsity))
    }
}

/// Number of entries to prune from a group of `n`.
pub(crate) fn prune_count(sparsity: f64, n: usize) -> usize {
    ((sparsity * n as f64) + 1e-9).floor() as usize
}
