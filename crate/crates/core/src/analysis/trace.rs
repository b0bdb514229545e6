use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::cka::cka;
use super::heatmap::HeatmapGrid;
use crate::error::{Error, Result};
use crate::model::JointModel;
use crate::numerics::{Real, Tape, Tensor};

/// Layers per group in the grouped view.
pub const GROUP_SIZE: usize = 3;

/// Head-averaged attention of one epoch on the probe batch. Every
/// matrix stacks the probe samples' `C x C` maps into `(B C) x C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionSnapshot {
    pub epoch: usize,
    pub rows: usize,
    pub cols: usize,
    /// One matrix per student layer.
    pub layers: Vec<Vec<f64>>,
    /// Input-block self-attention.
    pub input: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AttentionTrace {
    pub snapshots: Vec<AttentionSnapshot>,
}

/// `[B, h, n, m]` -> head mean as row-major `(B n) x m`.
pub fn head_average<F: Real>(w: &Tensor<F>) -> Result<(Vec<f64>, usize, usize)> {
    let s = w.shape();
    if s.len() != 4 {
        return Err(Error::shape("attention weights", s, &[0, 0, 0, 0]));
    }
    let (b, h, n, m) = (s[0], s[1], s[2], s[3]);
    let d = w.data();
    let mut out = vec![0.0; b * n * m];
    for i in 0..b {
        for k in 0..h {
            for r in 0..n * m {
                out[i * n * m + r] += d[(i * h + k) * n * m + r].as_f64() / h as f64;
            }
        }
    }
    Ok((out, b * n, m))
}

/// Attention maps of `model` on the probe inputs `x`.
pub fn snapshot<F: Real>(model: &JointModel<F>, x: &Tensor<F>, epoch: usize) -> Result<AttentionSnapshot> {
    let mut tape = Tape::with_params(&model.store);
    let out = model.forward(&mut tape, x)?;
    let (input, rows, cols) = head_average(tape.value(out.inputs.self_weights))?;
    let layers = out
        .student
        .attention
        .iter()
        .map(|&w| head_average(tape.value(w)).map(|r| r.0))
        .collect::<Result<Vec<_>>>()?;
    Ok(AttentionSnapshot { epoch, rows, cols, layers, input })
}

impl AttentionSnapshot {
    /// Largest deviation of any attention row sum from one.
    pub fn max_row_sum_error(&self) -> f64 {
        self.layers
            .iter()
            .chain(std::iter::once(&self.input))
            .flat_map(|m| m.chunks(self.cols))
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Mean weight a token puts on itself, per layer.
    pub fn mean_diagonal(&self, layer: usize) -> f64 {
        let m = &self.layers[layer];
        let c = self.cols;
        (0..self.rows).map(|r| m[r * c + r % c]).sum::<f64>() / self.rows as f64
    }
}

/// Consecutive groups of `GROUP_SIZE` layers (the last may be shorter).
pub fn layer_groups(layers: usize) -> Vec<Range<usize>> {
    (0..layers.div_ceil(GROUP_SIZE))
        .map(|g| g * GROUP_SIZE..((g + 1) * GROUP_SIZE).min(layers))
        .collect()
}

fn grid(kind: &str, rows: usize, trace: &AttentionTrace, cell: impl Fn(usize, &AttentionSnapshot) -> Result<f64>) -> Result<HeatmapGrid> {
    Ok(HeatmapGrid {
        row_kind: kind.into(),
        rows: (1..=rows).map(|r| format!("{kind}_{r}")).collect(),
        columns: trace.snapshots.iter().map(|s| format!("epoch_{}", s.epoch)).collect(),
        values: (0..rows)
            .map(|r| trace.snapshots.iter().map(|s| cell(r, s)).collect::<Result<Vec<_>>>())
            .collect::<Result<_>>()?,
    })
}

/// Heatmap grids keyed by metric name:
/// `cka` (each layer against itself at the last traced epoch),
/// `cka_input` (each layer against the input-block self-attention) and
/// `diag` (mean self-attention weight), per layer and per group.
pub fn heatmaps(trace: &AttentionTrace) -> Result<Vec<(HeatmapGrid, &'static str)>> {
    let last = trace.snapshots.last().ok_or_else(|| Error::Refused("attention trace is empty".into()))?;
    let layers = last.layers.len();
    if layers == 0 {
        return Err(Error::Refused("student has no attention layers to analyze".into()));
    }
    let n = last.rows;
    let layer_cka = |l: usize, s: &AttentionSnapshot| cka(&s.layers[l], &last.layers[l], n);
    let groups = layer_groups(layers);
    let mean_over = |g: &Range<usize>, f: &dyn Fn(usize) -> Result<f64>| -> Result<f64> {
        Ok(g.clone().map(f).collect::<Result<Vec<_>>>()?.iter().sum::<f64>() / g.len() as f64)
    };
    Ok(vec![
        (grid("layer", layers, trace, layer_cka)?, "cka"),
        (grid("layer", layers, trace, |l, s| cka(&s.layers[l], &s.input, n))?, "cka_input"),
        (grid("layer", layers, trace, |l, s| Ok(s.mean_diagonal(l)))?, "diag"),
        (grid("group", groups.len(), trace, |g, s| mean_over(&groups[g], &|l| layer_cka(l, s)))?, "cka"),
        (grid("group", groups.len(), trace, |g, s| mean_over(&groups[g], &|l| Ok(s.mean_diagonal(l))))?, "diag"),
    ])
}
