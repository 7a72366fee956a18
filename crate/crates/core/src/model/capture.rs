use std::collections::BTreeMap;

use ndarray::{Array1, Array2};

use super::{LinearKind, TokenSeq, Transformer};
use crate::error::{Error, Result};
use crate::par;
use crate::pruning::{ActivationStats, LayerStats};

/// Sequences per partial accumulator. Fixed so the merge order, and hence the
/// floating-point result, does not depend on the worker count.
const CHUNK: usize = 4;

struct Partial {
    sumsq: Array1<f64>,
    gram: Array2<f64>,
    count: usize,
}

impl Partial {
    fn zeros(d: usize) -> Self {
        Self {
            sumsq: Array1::zeros(d),
            gram: Array2::zeros((d, d)),
            count: 0,
        }
    }

    fn add_rows(&mut self, x: &Array2<f32>, rows: usize) {
        let x64 = x.slice(ndarray::s![..rows, ..]).mapv(|v| v as f64);
        self.gram += &x64.t().dot(&x64);
        for row in x64.outer_iter() {
            self.sumsq.zip_mut_with(&row, |s, &v| *s += v * v);
        }
        self.count += rows;
    }

    fn merge(&mut self, other: &Partial) {
        self.sumsq += &other.sumsq;
        self.gram += &other.gram;
        self.count += other.count;
    }
}

/// Distinct matrix inputs per block: q/k/v share one input.
const INPUT_SLOTS: usize = 4;

fn slot_of(kind: LinearKind) -> usize {
    match kind {
        LinearKind::Query | LinearKind::Key | LinearKind::Value => 0,
        LinearKind::Output => 1,
        LinearKind::Up => 2,
        LinearKind::Down => 3,
    }
}

/// Runs the calibration sequences through the model and records, for every
/// prunable matrix, the feature norms and Gram matrix of its input over all
/// non-PAD positions.
pub fn capture_layer_inputs(model: &Transformer, calib: &[TokenSeq]) -> Result<ActivationStats> {
    if calib.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    for seq in calib {
        seq.validate(model.config.max_seq_len)?;
        if seq.content_len() == 0 {
            return Err(Error::InvalidTokens("calibration sequence has no tokens".into()));
        }
    }
    let cfg = &model.config;
    let dims = [cfg.d_model, cfg.d_model, cfg.d_model, cfg.d_ff];
    let chunks: Vec<&[TokenSeq]> = calib.chunks(CHUNK).collect();
    let partials = par::map(&chunks, |chunk| -> Result<Vec<Partial>> {
        let mut acc: Vec<Partial> = (0..cfg.n_layers)
            .flat_map(|_| dims.iter().map(|&d| Partial::zeros(d)))
            .collect();
        for seq in chunk.iter() {
            let n = seq.content_len();
            let (_, trace) = model.forward_traced(&seq.ids()[..n])?;
            for (layer, bt) in trace.blocks.iter().enumerate() {
                let inputs = [&bt.attn_in, &bt.attn_concat, &bt.mlp_in, &bt.act];
                for (slot, x) in inputs.into_iter().enumerate() {
                    acc[layer * INPUT_SLOTS + slot].add_rows(x, n);
                }
            }
        }
        Ok(acc)
    });

    let mut total: Option<Vec<Partial>> = None;
    for part in partials {
        let part = part?;
        match total.as_mut() {
            None => total = Some(part),
            Some(t) => t.iter_mut().zip(&part).for_each(|(a, b)| a.merge(b)),
        }
    }
    let total = total.expect("non-empty calibration");

    let mut layers = BTreeMap::new();
    for id in model.linear_ids() {
        let p = &total[id.layer * INPUT_SLOTS + slot_of(id.kind)];
        layers.insert(
            id,
            LayerStats {
                feature_norms: p.sumsq.mapv(f64::sqrt),
                gram: p.gram.clone(),
                position_count: p.count,
            },
        );
    }
    Ok(ActivationStats { layers })
}
