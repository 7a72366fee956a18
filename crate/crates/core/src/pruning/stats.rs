use std::collections::BTreeMap;

use ndarray::{Array1, Array2};

use crate::model::LinearId;

/// Calibration statistics of the input to one prunable matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStats {
    /// `‖X_j‖₂` over all calibration positions, one entry per input feature.
    pub feature_norms: Array1<f64>,
    /// `H = X Xᵀ` accumulated over the same positions.
    pub gram: Array2<f64>,
    pub position_count: usize,
}

impl LayerStats {
    pub fn d_in(&self) -> usize {
        self.feature_norms.len()
    }

    /// Builds statistics from an explicit input matrix with one row per
    /// position.
    pub fn from_inputs(x: &Array2<f64>) -> Self {
        let gram = x.t().dot(x);
        let feature_norms = x
            .columns()
            .into_iter()
            .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        LayerStats {
            feature_norms,
            gram,
            position_count: x.nrows(),
        }
    }
}

/// Per-matrix calibration statistics, keyed by prunable weight.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActivationStats {
    pub layers: BTreeMap<LinearId, LayerStats>,
}

impl ActivationStats {
    pub fn get(&self, id: LinearId) -> Option<&LayerStats> {
        self.layers.get(&id)
    }
}
