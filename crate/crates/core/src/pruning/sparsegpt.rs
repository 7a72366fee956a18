use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView2};

use super::{check_sparsity, prune_count, ActivationStats, MatrixMask, SparsityMask};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve, spd_inverse};
use crate::model::Transformer;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparseGptOptions {
    pub block_size: usize,
    /// Dampening as a fraction of the mean Gram diagonal.
    pub damp_ratio: f64,
}

impl Default for SparseGptOptions {
    fn default() -> Self {
        Self {
            block_size: 32,
            damp_ratio: 0.01,
        }
    }
}

/// Working inverse Hessian. Columns leave the active set as blocks finish;
/// `hinv` restricted to the active set is always the inverse of the damped
/// Hessian restricted to the same set.
#[derive(Debug, Clone)]
pub struct HessianState {
    pub hinv: Array2<f64>,
    pub damp_lambda: f64,
    pub active: Vec<bool>,
}

impl HessianState {
    pub fn new(gram: ArrayView2<f64>, damp_ratio: f64, name: &str) -> Result<Self> {
        let d = gram.nrows();
        let mean_diag = gram.diag().sum() / d.max(1) as f64;
        let damp_lambda = damp_ratio * if mean_diag > 0.0 { mean_diag } else { 1.0 };
        let mut h = gram.to_owned();
        h.diag_mut().iter_mut().for_each(|v| *v += damp_lambda);
        let hinv = spd_inverse(h.view()).map_err(|e| Error::NotPositiveDefinite {
            name: name.to_string(),
            pivot: e.pivot,
        })?;
        Ok(Self {
            hinv,
            damp_lambda,
            active: vec![true; d],
        })
    }

    /// Removes column `j` from the active set by the rank-one downdate
    /// `Hinv ← Hinv − Hinv[:,j] Hinv[j,:] / Hinv[j,j]`.
    pub fn remove(&mut self, j: usize, name: &str) -> Result<()> {
        let pivot = self.hinv[[j, j]];
        if !(pivot > 0.0) {
            return Err(Error::NotPositiveDefinite {
                name: name.to_string(),
                pivot,
            });
        }
        let d = self.hinv.nrows();
        let col: Vec<f64> = (0..d).map(|i| if self.active[i] { self.hinv[[i, j]] } else { 0.0 }).collect();
        for a in 0..d {
            if !self.active[a] || col[a] == 0.0 {
                continue;
            }
            let f = col[a] / pivot;
            for b in 0..d {
                if self.active[b] {
                    self.hinv[[a, b]] -= f * col[b];
                }
            }
        }
        self.active[j] = false;
        for i in 0..d {
            self.hinv[[i, j]] = 0.0;
            self.hinv[[j, i]] = 0.0;
        }
        Ok(())
    }
}

/// Prunes one matrix with OBS compensation.
///
/// Columns are processed in blocks, left to right. In each block every row
/// selects its `E_ij = W_ij² / Hinv_jj` lowest entries, removes them jointly
/// with the exact OBS update over the block and all later columns, then the
/// block leaves the active set. A single block covering all columns gives
/// the masked least-squares optimum.
pub fn sparsegpt_matrix(
    w: ArrayView2<f32>,
    gram: ArrayView2<f64>,
    sparsity: f64,
    opts: SparseGptOptions,
    name: &str,
) -> Result<(Array2<f32>, MatrixMask)> {
    let (rows, cols) = w.dim();
    if gram.dim() != (cols, cols) {
        return Err(Error::ShapeMismatch {
            name: name.to_string(),
            expected: vec![cols, cols],
            actual: gram.shape().to_vec(),
        });
    }
    let mut state = HessianState::new(gram, opts.damp_ratio, name)?;
    let mut weights = w.mapv(|v| v as f64);
    let mut mask = Array2::from_elem((rows, cols), true);
    let bs = opts.block_size.max(1);

    let mut start = 0;
    while start < cols {
        let end = (start + bs).min(cols);
        let k = prune_count(sparsity, end) - prune_count(sparsity, start);
        if k > 0 {
            let hinv = &state.hinv;
            for r in 0..rows {
                let mut order: Vec<usize> = (start..end).collect();
                // Single precision keeps last-ulp noise in Hinv from breaking
                // ties, which go to the lower column index.
                let scores: Vec<f32> = (start..end)
                    .map(|c| (weights[[r, c]].powi(2) / hinv[[c, c]]) as f32)
                    .collect();
                order.sort_by(|&a, &b| scores[a - start].total_cmp(&scores[b - start]).then(a.cmp(&b)));
                let mut pruned = order[..k].to_vec();
                pruned.sort_unstable();

                let sub = Array2::from_shape_fn((k, k), |(i, j)| hinv[[pruned[i], pruned[j]]]);
                let l = cholesky(sub.view()).map_err(|e| Error::NotPositiveDefinite {
                    name: name.to_string(),
                    pivot: e.pivot,
                })?;
                let wp: Array1<f64> = pruned.iter().map(|&c| weights[[r, c]]).collect();
                let z = cholesky_solve(l.view(), wp.view());
                for c in start..cols {
                    let delta: f64 = pruned.iter().zip(z.iter()).map(|(&p, &zp)| hinv[[c, p]] * zp).sum();
                    weights[[r, c]] -= delta;
                }
                for &c in &pruned {
                    weights[[r, c]] = 0.0;
                    mask[[r, c]] = false;
                }
            }
        }
        if end < cols {
            for j in start..end {
                state.remove(j, name)?;
            }
        }
        start = end;
    }
    Ok((weights.mapv(|v| v as f32), mask))
}

/// SparseGPT over every prunable matrix. Returns the mask and a new model
/// whose kept weights carry the compensated values.
pub fn sparsegpt_prune(
    model: &Transformer,
    stats: &ActivationStats,
    sparsity: f64,
    opts: SparseGptOptions,
) -> Result<(SparsityMask, Transformer)> {
    check_sparsity(sparsity)?;
    if !(opts.damp_ratio > 0.0) {
        return Err(Error::Config(format!("damp_ratio must be positive, got {}", opts.damp_ratio)));
    }
    if opts.block_size == 0 {
        return Err(Error::Config("block_size must be at least 1".into()));
    }
    let ids = model.linear_ids();
    for &id in &ids {
        if stats.get(id).is_none() {
            return Err(Error::MissingStats(id.to_string()));
        }
    }
    let results = par::map(&ids, |&id| {
        let s = stats.get(id).expect("checked above");
        sparsegpt_matrix(model.linear(id).view(), s.gram.view(), sparsity, opts, &id.to_string())
    });
    let mut updated = model.clone();
    let mut masks = BTreeMap::new();
    for (id, res) in ids.into_iter().zip(results) {
        let (w, m) = res?;
        *updated.linear_mut(id) = w;
        masks.insert(id, m);
    }
    Ok((SparsityMask::new(masks, sparsity), updated))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pruning::masked_least_squares_oracle;
    use ndarray::array;

    #[test]
    fn two_by_two_obs_update() {
        let w = array![[1.0f32, 1.0]];
        let h = array![[1.0, 0.5], [0.5, 1.0]];
        // Force column 0 out: a tiny damping keeps H essentially exact.
        let opts = SparseGptOptions { block_size: 2, damp_ratio: 1e-12 };
        let (out, mask) = sparsegpt_matrix(w.view(), h.view(), 0.5, opts, "t").unwrap();
        assert_eq!(mask, array![[false, true]]);
        assert_eq!(out[[0, 0]], 0.0);
        assert!((out[[0, 1]] - 1.5).abs() < 1e-6);
    }

    #[test]
    fn identity_hessian_has_no_compensation() {
        let w = array![[0.3f32, -1.2, 0.8, 0.1, -0.5, 2.0], [1.0, 0.2, -0.3, 0.9, 0.05, -0.7]];
        let h = Array2::<f64>::eye(6);
        for bs in [1, 2, 3, 6] {
            let opts = SparseGptOptions { block_size: bs, damp_ratio: 0.01 };
            let (out, mask) = sparsegpt_matrix(w.view(), h.view(), 0.5, opts, "t").unwrap();
            for ((&o, &orig), &keep) in out.iter().zip(w.iter()).zip(mask.iter()) {
                if keep {
                    assert_eq!(o, orig);
                } else {
                    assert_eq!(o, 0.0);
                }
            }
            // Per-block magnitude selection.
            let per_block = bs.min(6);
            for r in 0..2 {
                for b in (0..6).step_by(per_block) {
                    let end = (b + per_block).min(6);
                    let k = prune_count(0.5, end) - prune_count(0.5, b);
                    let mut cols: Vec<usize> = (b..end).collect();
                    cols.sort_by(|&x, &y| w[[r, x]].abs().total_cmp(&w[[r, y]].abs()).then(x.cmp(&y)));
                    for &c in &cols[..k] {
                        assert!(!mask[[r, c]]);
                    }
                    for &c in &cols[k..] {
                        assert!(mask[[r, c]]);
                    }
                }
            }
        }
    }

    #[test]
    fn full_block_matches_oracle_on_correlated_inputs() {
        let x = Array2::from_shape_fn((32, 5), |(i, j)| {
            let base = ((i * 37 + 11) % 17) as f64 / 17.0 - 0.5;
            base * (j as f64 + 1.0) + ((i * j * 13 + 7) % 11) as f64 / 11.0
        });
        let gram = x.t().dot(&x);
        let w = array![[0.4f32, -0.2, 1.1, 0.7, -0.9], [0.3, 0.8, -0.6, 0.2, 0.5]];
        let opts = SparseGptOptions { block_size: 5, damp_ratio: 0.01 };
        let (out, mask) = sparsegpt_matrix(w.view(), gram.view(), 0.4, opts, "t").unwrap();
        let state = HessianState::new(gram.view(), 0.01, "t").unwrap();
        let mut damped = gram.clone();
        damped.diag_mut().iter_mut().for_each(|v| *v += state.damp_lambda);
        let oracle = masked_least_squares_oracle(w.mapv(|v| v as f64).view(), damped.view(), mask.view()).unwrap();
        for (a, b) in out.iter().zip(oracle.iter()) {
            assert!((*a as f64 - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn downdate_matches_submatrix_inverse() {
        let h = array![[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]];
        let mut st = HessianState::new(h.view(), 1e-12, "t").unwrap();
        st.remove(0, "t").unwrap();
        let sub = array![[3.0, 0.2], [0.2, 2.0]];
        let inv = spd_inverse(sub.view()).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((st.hinv[[i + 1, j + 1]] - inv[[i, j]]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn per_row_sparsity_exact_with_ragged_blocks() {
        let w = Array2::from_shape_fn((3, 10), |(i, j)| ((i * 10 + j) as f32 * 0.37).sin());
        let gram = Array2::<f64>::eye(10) * 2.0;
        let opts = SparseGptOptions { block_size: 3, damp_ratio: 0.01 };
        let (_, mask) = sparsegpt_matrix(w.view(), gram.view(), 0.5, opts, "t").unwrap();
        for row in mask.outer_iter() {
            assert_eq!(row.iter().filter(|&&k| !k).count(), 5);
        }
    }

    #[test]
    fn indefinite_gram_reports_damping_hint() {
        let w = array![[1.0f32, 1.0]];
        let h = array![[1.0, 3.0], [3.0, 1.0]];
        let err = sparsegpt_matrix(w.view(), h.view(), 0.5, SparseGptOptions::default(), "layer").unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { .. }));
        assert!(err.to_string().contains("damp_ratio"));
    }
}
