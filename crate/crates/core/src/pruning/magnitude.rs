use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};

use super::{check_sparsity, prune_count, MatrixMask, SparsityMask};
use crate::error::Result;
use crate::model::Transformer;

/// Prunes the `⌊s·numel⌋` smallest-magnitude entries of one matrix. Ties
/// go to the earlier entry in row-major order.
pub fn magnitude_mask(w: ArrayView2<f32>, sparsity: f64) -> MatrixMask {
    let cols = w.ncols();
    let mut order: Vec<usize> = (0..w.len()).collect();
    let flat: Vec<f32> = w.iter().map(|v| v.abs()).collect();
    order.sort_by(|&a, &b| flat[a].total_cmp(&flat[b]).then(a.cmp(&b)));
    let mut mask = Array2::from_elem(w.raw_dim(), true);
    for &i in &order[..prune_count(sparsity, w.len())] {
        mask[[i / cols, i % cols]] = false;
    }
    mask
}

/// Matrix-wide magnitude pruning of every prunable weight. Weights are not
/// modified; apply the mask with [`super::apply_mask`].
pub fn magnitude_prune(model: &Transformer, sparsity: f64) -> Result<SparsityMask> {
    check_sparsity(sparsity)?;
    let masks: BTreeMap<_, _> = model
        .linear_ids()
        .into_iter()
        .map(|id| (id, magnitude_mask(model.linear(id).view(), sparsity)))
        .collect();
    Ok(SparsityMask::new(masks, sparsity))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::model::ModelConfig;
    use ndarray::array;

    #[test]
    fn keeps_largest_magnitudes() {
        let w = array![[3.0f32, -1.0, 2.0, -4.0]];
        let m = magnitude_mask(w.view(), 0.5);
        assert_eq!(m, array![[true, false, false, true]]);
    }

    #[test]
    fn zero_sparsity_keeps_all() {
        let w = array![[0.0f32, 1.0], [2.0, 0.0]];
        assert!(magnitude_mask(w.view(), 0.0).iter().all(|&k| k));
    }

    #[test]
    fn ties_prune_earlier_first() {
        let w = array![[1.0f32, 1.0], [1.0, 1.0]];
        let m = magnitude_mask(w.view(), 0.5);
        assert_eq!(m, array![[false, false], [true, true]]);
    }

    #[test]
    fn range_checked() {
        let model = Transformer::new(ModelConfig { d_model: 8, n_heads: 2, n_layers: 1, d_ff: 8, max_seq_len: 4, ..Default::default() }).unwrap();
        assert!(matches!(magnitude_prune(&model, 1.0), Err(Error::SparsityOutOfRange(_))));
        assert!(matches!(magnitude_prune(&model, -0.1), Err(Error::SparsityOutOfRange(_))));
    }
}
