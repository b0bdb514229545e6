use super::{SeriesDataset, Split};
use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

/// One normalized `(input, target)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesWindow {
    /// Row-major `L x C`.
    pub input: Vec<f64>,
    /// Row-major `T x C`.
    pub target: Vec<f64>,
    /// Source row of the first input step.
    pub origin: usize,
}

/// Sliding windows lying entirely inside `split`, z-scored with the
/// dataset's train statistics. The count is `ceil((n - L - T + 1) / stride)`.
pub fn windows(ds: &SeriesDataset, split: Split, lookback: usize, horizon: usize, stride: usize) -> Result<Vec<SeriesWindow>> {
    if lookback == 0 || horizon == 0 || stride == 0 {
        return Err(Error::config("lookback, horizon and stride must be positive"));
    }
    let range = ds.splits()?.get(split);
    let norm = ds.norm()?;
    let span = lookback + horizon;
    if range.len() < span {
        return Err(Error::config(format!(
            "{split:?} split of `{}` has {} rows, fewer than lookback + horizon = {span}",
            ds.name,
            range.len()
        )));
    }
    let c = ds.channels;
    let grab = |from: usize, len: usize| -> Vec<f64> {
        (from..from + len)
            .flat_map(|t| (0..c).map(move |ch| (t, ch)))
            .map(|(t, ch)| norm.normalize(ds.values[t * c + ch], ch))
            .collect()
    };
    Ok((range.start..=range.end - span)
        .step_by(stride)
        .map(|s| SeriesWindow {
            input: grab(s, lookback),
            target: grab(s + lookback, horizon),
            origin: s,
        })
        .collect())
}

/// Stack windows into `[B, L, C]` inputs and `[B, T, C]` targets.
pub fn batch_tensors<F: Real>(ws: &[&SeriesWindow], channels: usize) -> Result<(Tensor<F>, Tensor<F>)> {
    let b = ws.len();
    if b == 0 {
        return Err(Error::EmptyDataset("batch".into()));
    }
    let l = ws[0].input.len() / channels;
    let t = ws[0].target.len() / channels;
    let x: Vec<f64> = ws.iter().flat_map(|w| w.input.iter().copied()).collect();
    let y: Vec<f64> = ws.iter().flat_map(|w| w.target.iter().copied()).collect();
    Ok((Tensor::from_f64(&[b, l, channels], &x)?, Tensor::from_f64(&[b, t, channels], &y)?))
}
