use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::linalg::lu_solve;

/// Reconstruction-optimal kept weights for a fixed mask.
///
/// For each row `r` with kept columns `K`, solves
/// `gram[K,K] · w_K = gram[K,:] · W_r`, which minimizes `‖Ŵ_r X − W_r X‖²`
/// subject to zeros outside `K`. Pruned entries are zero.
pub fn masked_least_squares_oracle(
    w: ArrayView2<f64>,
    gram: ArrayView2<f64>,
    mask: ArrayView2<bool>,
) -> Result<Array2<f64>> {
    let (rows, cols) = w.dim();
    assert_eq!(gram.dim(), (cols, cols));
    assert_eq!(mask.dim(), (rows, cols));
    let mut out = Array2::<f64>::zeros((rows, cols));
    for r in 0..rows {
        let kept: Vec<usize> = (0..cols).filter(|&c| mask[[r, c]]).collect();
        if kept.is_empty() {
            continue;
        }
        let sub = Array2::from_shape_fn((kept.len(), kept.len()), |(i, j)| gram[[kept[i], kept[j]]]);
        let rhs: Array1<f64> = kept.iter().map(|&i| gram.row(i).dot(&w.row(r))).collect();
        let sol = lu_solve(sub.view(), rhs.view()).ok_or(Error::SingularSubsystem { row: r })?;
        for (&c, &v) in kept.iter().zip(sol.iter()) {
            out[[r, c]] = v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn all_keep_returns_input() {
        let w = array![[1.0, -2.0], [0.5, 3.0]];
        let h = array![[2.0, 0.3], [0.3, 1.0]];
        let m = Array2::from_elem((2, 2), true);
        let out = masked_least_squares_oracle(w.view(), h.view(), m.view()).unwrap();
        assert!(out.iter().zip(w.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn two_by_two_hand_case() {
        let w = array![[1.0, 1.0]];
        let h = array![[1.0, 0.5], [0.5, 1.0]];
        let m = array![[false, true]];
        let out = masked_least_squares_oracle(w.view(), h.view(), m.view()).unwrap();
        assert_eq!(out[[0, 0]], 0.0);
        assert!((out[[0, 1]] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn diagonal_gram_decouples() {
        let w = array![[1.0, 2.0, 3.0]];
        let h = array![[2.0, 0.0, 0.0], [0.0, 5.0, 0.0], [0.0, 0.0, 1.0]];
        let m = array![[true, false, true]];
        let out = masked_least_squares_oracle(w.view(), h.view(), m.view()).unwrap();
        assert_eq!(out, array![[1.0, 0.0, 3.0]]);
    }

    #[test]
    fn singular_subsystem_reported() {
        let w = array![[1.0, 1.0]];
        let h = array![[0.0, 0.0], [0.0, 0.0]];
        let m = array![[true, true]];
        assert!(matches!(
            masked_least_squares_oracle(w.view(), h.view(), m.view()),
            Err(Error::SingularSubsystem { row: 0 })
        ));
    }
}
