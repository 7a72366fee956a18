use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::checkpoint::{Container, TensorData};
use crate::model::{LinearId, Transformer};

/// Keep (`true`) / prune (`false`) map for one matrix.
pub type MatrixMask = Array2<bool>;

#[derive(Debug, Clone, PartialEq)]
pub struct SparsityMask {
    pub masks: BTreeMap<LinearId, MatrixMask>,
    pub target_sparsity: f64,
    pub achieved_sparsity: f64,
}

impl SparsityMask {
    pub fn new(masks: BTreeMap<LinearId, MatrixMask>, target_sparsity: f64) -> Self {
        let (pruned, total) = masks.values().fold((0usize, 0usize), |(p, t), m| {
            (p + m.iter().filter(|&&k| !k).count(), t + m.len())
        });
        let achieved_sparsity = if total == 0 { 0.0 } else { pruned as f64 / total as f64 };
        Self {
            masks,
            target_sparsity,
            achieved_sparsity,
        }
    }

    pub fn all_keep(model: &Transformer) -> Self {
        let masks = model
            .linear_ids()
            .into_iter()
            .map(|id| (id, Array2::from_elem(model.linear(id).raw_dim(), true)))
            .collect();
        Self::new(masks, 0.0)
    }

    pub fn get(&self, id: LinearId) -> Option<&MatrixMask> {
        self.masks.get(&id)
    }
}

/// Zeroes every pruned entry. Idempotent.
pub fn apply_mask(model: &Transformer, mask: &SparsityMask) -> Result<Transformer> {
    let mut out = model.clone();
    for (&id, m) in &mask.masks {
        if id.layer >= out.blocks.len() {
            return Err(Error::ShapeMismatch {
                name: id.to_string(),
                expected: vec![],
                actual: m.shape().to_vec(),
            });
        }
        let w = out.linear_mut(id);
        if w.shape() != m.shape() {
            return Err(Error::ShapeMismatch {
                name: id.to_string(),
                expected: w.shape().to_vec(),
                actual: m.shape().to_vec(),
            });
        }
        w.zip_mut_with(m, |v, &keep| {
            if !keep {
                *v = 0.0;
            }
        });
    }
    Ok(out)
}

/// Fraction of exact zeros among prunable parameters.
pub fn measure_sparsity(model: &Transformer) -> f64 {
    let (zeros, total) = model.linear_ids().into_iter().fold((0usize, 0usize), |(z, t), id| {
        let w = model.linear(id);
        (z + w.iter().filter(|&&v| v == 0.0).count(), t + w.len())
    });
    if total == 0 {
        0.0
    } else {
        zeros as f64 / total as f64
    }
}

/// Writes masks as `u8` tensors named `<weight>.mask` in an NTC1 container.
pub fn save_mask(mask: &SparsityMask, path: &Path) -> Result<()> {
    let tensors = mask
        .masks
        .iter()
        .map(|(id, m)| {
            (
                format!("{id}.mask"),
                TensorData::U8 {
                    shape: m.shape().to_vec(),
                    data: m.iter().map(|&k| k as u8).collect(),
                },
            )
        })
        .collect();
    Container {
        metadata: serde_json::json!({
            "kind": "mask",
            "target_sparsity": mask.target_sparsity,
            "achieved_sparsity": mask.achieved_sparsity,
        }),
        tensors,
    }
    .write(path)
}

pub fn load_mask(path: &Path) -> Result<SparsityMask> {
    let c = Container::read(path)?;
    let bad = |m: String| Error::MalformedCheckpoint(m);
    if c.metadata.get("kind").and_then(|v| v.as_str()) != Some("mask") {
        return Err(bad("container does not hold a mask".into()));
    }
    let target = c
        .metadata
        .get("target_sparsity")
        .and_then(|v| v.as_f64())
        .ok_or_else(|| bad("missing target_sparsity".into()))?;
    let mut masks = BTreeMap::new();
    for (name, t) in c.tensors {
        let weight = name
            .strip_suffix(".mask")
            .ok_or_else(|| bad(format!("unexpected tensor {name}")))?;
        let id: LinearId = weight.parse()?;
        let TensorData::U8 { shape, data } = t else {
            return Err(bad(format!("{name} is not u8")));
        };
        if shape.len() != 2 {
            return Err(bad(format!("{name} is not 2-D")));
        }
        let m = Array2::from_shape_vec((shape[0], shape[1]), data.into_iter().map(|b| b != 0).collect())
            .map_err(|e| bad(e.to_string()))?;
        masks.insert(id, m);
    }
    Ok(SparsityMask::new(masks, target))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::pruning::magnitude_prune;

    fn tiny() -> Transformer {
        Transformer::new(ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_layers: 2,
            d_ff: 16,
            max_seq_len: 8,
            seed: 6,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn all_keep_leaves_model_unchanged() {
        let m = tiny();
        assert_eq!(apply_mask(&m, &SparsityMask::all_keep(&m)).unwrap(), m);
        assert_eq!(measure_sparsity(&m), 0.0);
    }

    #[test]
    fn half_magnitude_prune_accounting_and_idempotence() {
        let m = tiny();
        let mask = magnitude_prune(&m, 0.5).unwrap();
        let pruned = apply_mask(&m, &mask).unwrap();
        let numel: usize = m.linear_ids().iter().map(|&id| m.linear(id).len()).sum();
        assert!((measure_sparsity(&pruned) - 0.5).abs() <= 1.0 / numel as f64);
        assert!((mask.achieved_sparsity - 0.5).abs() <= 1e-12);
        assert_eq!(apply_mask(&pruned, &mask).unwrap(), pruned);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let m = tiny();
        let mut mask = SparsityMask::all_keep(&m);
        let id = m.linear_ids()[0];
        mask.masks.insert(id, Array2::from_elem((3, 3), true));
        assert!(matches!(apply_mask(&m, &mask), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn mask_file_round_trip() {
        let m = tiny();
        let mask = magnitude_prune(&m, 0.3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mask.ntc");
        save_mask(&mask, &p).unwrap();
        let back = load_mask(&p).unwrap();
        assert_eq!(back, mask);
        let c = Container::read(&p).unwrap();
        assert!(c.tensors.contains_key("blocks.0.attn.wq.mask"));
    }
}
