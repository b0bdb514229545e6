//! Naive2: multiplicative deseasonalization, repeat-last, reseasonalize.

use crate::error::{Error, Result};

/// Fitted Naive2 state for one series.
#[derive(Debug, Clone, PartialEq)]
pub struct Naive2Model {
    pub m: usize,
    /// Seasonal indices, one per phase; all ones when no seasonality was
    /// applied.
    pub indices: Vec<f64>,
    pub seasonal: bool,
    /// Phase of the first in-sample point is 0; this is the series length.
    n: usize,
    last_deseasonalized: f64,
}

/// Sample autocorrelation at `lag` (denominator over the full series).
pub fn acf(x: &[f64], lag: usize) -> f64 {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let den: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    if den == 0.0 || lag >= n {
        return 0.0;
    }
    let num: f64 = (lag..n).map(|t| (x[t] - mean) * (x[t - lag] - mean)).sum();
    num / den
}

/// 90% seasonality test on the lag-`m` autocorrelation with the
/// Bartlett-style limit `1.645 sqrt((1 + 2 s) / n)`,
/// `s = sum_{i<m} acf(i)^2`.
pub fn seasonality_test(x: &[f64], m: usize) -> bool {
    if m <= 1 || x.len() < 3 * m {
        return false;
    }
    let s: f64 = (1..m).map(|i| acf(x, i).powi(2)).sum();
    let limit = 1.645 * ((1.0 + 2.0 * s) / x.len() as f64).sqrt();
    acf(x, m).abs() > limit
}

/// Centered moving average of order `m` (a 2 x m average when `m` is
/// even); undefined ends are `None`.
pub fn centered_moving_average(x: &[f64], m: usize) -> Vec<Option<f64>> {
    let n = x.len();
    let mut out = vec![None; n];
    if m % 2 == 1 {
        let h = m / 2;
        for t in h..n.saturating_sub(h) {
            out[t] = Some(x[t - h..=t + h].iter().sum::<f64>() / m as f64);
        }
    } else {
        let h = m / 2;
        for t in h..n.saturating_sub(h) {
            let inner: f64 = x[t - h + 1..t + h].iter().sum();
            out[t] = Some((0.5 * x[t - h] + inner + 0.5 * x[t + h]) / m as f64);
        }
    }
    out
}

/// Classical multiplicative seasonal indices: per-phase means of
/// `x / CMA`, rescaled to average one.
pub fn seasonal_indices(x: &[f64], m: usize) -> Vec<f64> {
    let cma = centered_moving_average(x, m);
    let mut sums = vec![0.0; m];
    let mut counts = vec![0usize; m];
    for (t, c) in cma.iter().enumerate() {
        if let Some(c) = c {
            sums[t % m] += x[t] / c;
            counts[t % m] += 1;
        }
    }
    let raw: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 1.0 })
        .collect();
    let mean = raw.iter().sum::<f64>() / m as f64;
    raw.iter().map(|r| r / mean).collect()
}

impl Naive2Model {
    pub fn fit(insample: &[f64], m: usize) -> Result<Self> {
        if insample.is_empty() || m == 0 {
            return Err(Error::config("Naive2 needs a nonempty in-sample series and m >= 1"));
        }
        let positive = insample.iter().all(|&v| v > 0.0);
        let seasonal = positive && seasonality_test(insample, m);
        let indices = if seasonal { seasonal_indices(insample, m) } else { vec![1.0; m] };
        let n = insample.len();
        let last_deseasonalized = insample[n - 1] / indices[(n - 1) % m];
        Ok(Naive2Model {
            m,
            indices,
            seasonal,
            n,
            last_deseasonalized,
        })
    }

    pub fn forecast(&self, horizon: usize) -> Vec<f64> {
        (0..horizon)
            .map(|h| self.last_deseasonalized * self.indices[(self.n + h) % self.m])
            .collect()
    }
}

pub fn naive2_forecast(insample: &[f64], m: usize, horizon: usize) -> Result<Vec<f64>> {
    Ok(Naive2Model::fit(insample, m)?.forecast(horizon))
}
