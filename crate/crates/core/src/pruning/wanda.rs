use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView1, ArrayView2};

use super::{check_sparsity, prune_count, ActivationStats, MatrixMask, SparsityMask};
use crate::error::{Error, Result};
use crate::model::Transformer;

/// Scores `|W_ij|·‖X_j‖₂` and prunes the `⌊s·d_in⌋` lowest scores of each
/// output row. Ties go to the lower column index.
pub fn wanda_mask(w: ArrayView2<f32>, feature_norms: ArrayView1<f64>, sparsity: f64) -> MatrixMask {
    assert_eq!(w.ncols(), feature_norms.len(), "feature_norms length must equal d_in");
    let k = prune_count(sparsity, w.ncols());
    let mut mask = Array2::from_elem(w.raw_dim(), true);
    let mut order: Vec<usize> = (0..w.ncols()).collect();
    for (r, row) in w.outer_iter().enumerate() {
        let scores: Vec<f64> = row
            .iter()
            .zip(feature_norms.iter())
            .map(|(&v, &n)| (v as f64).abs() * n)
            .collect();
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
        for &c in &order[..k] {
            mask[[r, c]] = false;
        }
    }
    mask
}

pub fn wanda_prune(model: &Transformer, stats: &ActivationStats, sparsity: f64) -> Result<SparsityMask> {
    check_sparsity(sparsity)?;
    let mut masks = BTreeMap::new();
    for id in model.linear_ids() {
        let s = stats.get(id).ok_or_else(|| Error::MissingStats(id.to_string()))?;
        let w = model.linear(id);
        if s.d_in() != w.ncols() {
            return Err(Error::ShapeMismatch {
                name: id.to_string(),
                expected: vec![w.ncols()],
                actual: vec![s.d_in()],
            });
        }
        if s.feature_norms.iter().any(|v| !v.is_finite()) {
            return Err(Error::MissingStats(format!("{id} has non-finite feature norms")));
        }
        masks.insert(id, wanda_mask(w.view(), s.feature_norms.view(), sparsity));
    }
    Ok(SparsityMask::new(masks, sparsity))
}
