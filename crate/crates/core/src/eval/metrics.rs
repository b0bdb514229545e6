//! Point-forecast error metrics over equally shaped arrays.

use crate::error::{Error, Result};

/// Denominator floor for SMAPE cells.
pub const EPS: f64 = 1e-8;

fn same_len(p: &[f64], y: &[f64]) -> Result<()> {
    if p.len() != y.len() {
        return Err(Error::shape("metric", &[p.len()], &[y.len()]));
    }
    if p.is_empty() {
        return Err(Error::EmptyDataset("metric input".into()));
    }
    Ok(())
}

pub fn mse(p: &[f64], y: &[f64]) -> Result<f64> {
    same_len(p, y)?;
    Ok(p.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64)
}

pub fn mae(p: &[f64], y: &[f64]) -> Result<f64> {
    same_len(p, y)?;
    Ok(p.iter().zip(y).map(|(a, b)| (a - b).abs()).sum::<f64>() / p.len() as f64)
}

/// `200 * mean(|p - y| / (|p| + |y|))`, cells with a denominator below
/// [`EPS`] contribute zero.
pub fn smape(p: &[f64], y: &[f64]) -> Result<f64> {
    same_len(p, y)?;
    let s: f64 = p
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let den = a.abs() + b.abs();
            if den < EPS {
                0.0
            } else {
                (a - b).abs() / den
            }
        })
        .sum();
    Ok(200.0 * s / p.len() as f64)
}

/// Mean `|x_t - x_{t-m}|` of one in-sample series.
pub fn seasonal_naive_mae(insample: &[f64], m: usize) -> Result<f64> {
    if m == 0 || insample.len() <= m {
        return Err(Error::config(format!(
            "MASE needs an in-sample series longer than m = {m} (got {})",
            insample.len()
        )));
    }
    let n = insample.len() - m;
    Ok((m..insample.len()).map(|t| (insample[t] - insample[t - m]).abs()).sum::<f64>() / n as f64)
}

/// MASE of one series. A zero denominator gives `+inf` and a warning.
pub fn mase(p: &[f64], y: &[f64], insample: &[f64], m: usize) -> Result<f64> {
    let den = seasonal_naive_mae(insample, m)?;
    let num = mae(p, y)?;
    if den == 0.0 {
        log::warn!("MASE denominator is zero (constant seasonal in-sample series)");
        return Ok(if num == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(num / den)
}

/// `(S / S2 + M / M2) / 2`.
pub fn owa(smape: f64, mase: f64, naive2_smape: f64, naive2_mase: f64) -> Result<f64> {
    if !(naive2_smape > 0.0 && naive2_mase > 0.0) {
        return Err(Error::config("OWA needs positive Naive2 SMAPE and MASE"));
    }
    Ok(0.5 * (smape / naive2_smape + mase / naive2_mase))
}
