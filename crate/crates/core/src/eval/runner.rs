use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metrics::{self, mae, mse, owa, smape};
use super::naive2::naive2_forecast;
use super::report::MetricReport;
use crate::data::{batch_tensors, windows, NormStats, SeriesDataset, SeriesWindow, Split};
use crate::error::{Error, Result};
use crate::model::StudentModel;
use crate::numerics::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    LongTerm,
    ShortTerm,
    FewShot,
    ZeroShot,
}

impl Protocol {
    pub const NAMES: &'static str = "long_term, short_term, few_shot, zero_shot";

    pub fn name(self) -> &'static str {
        match self {
            Protocol::LongTerm => "long_term",
            Protocol::ShortTerm => "short_term",
            Protocol::FewShot => "few_shot",
            Protocol::ZeroShot => "zero_shot",
        }
    }
}

impl FromStr for Protocol {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "long_term" => Ok(Protocol::LongTerm),
            "short_term" => Ok(Protocol::ShortTerm),
            "few_shot" => Ok(Protocol::FewShot),
            "zero_shot" => Ok(Protocol::ZeroShot),
            _ => Err(Error::config(format!("unknown protocol `{s}` (valid: {})", Protocol::NAMES))),
        }
    }
}

/// A model that maps normalized input windows to normalized forecasts.
pub trait Forecaster {
    fn name(&self) -> String;

    /// Row-major `[B, T, C]` predictions for `ws`.
    fn predict(&self, ws: &[SeriesWindow], horizon: usize, channels: usize, norm: &NormStats) -> Result<Vec<f64>>;
}

/// Returns the true targets.
pub struct OracleForecaster;

impl Forecaster for OracleForecaster {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn predict(&self, ws: &[SeriesWindow], _: usize, _: usize, _: &NormStats) -> Result<Vec<f64>> {
        Ok(ws.iter().flat_map(|w| w.target.iter().copied()).collect())
    }
}

/// Repeats the last observed row.
pub struct RepeatLast;

impl Forecaster for RepeatLast {
    fn name(&self) -> String {
        "naive".into()
    }

    fn predict(&self, ws: &[SeriesWindow], horizon: usize, channels: usize, _: &NormStats) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(ws.len() * horizon * channels);
        for w in ws {
            let last = &w.input[w.input.len() - channels..];
            for _ in 0..horizon {
                out.extend_from_slice(last);
            }
        }
        Ok(out)
    }
}

/// Naive2 per channel, fitted on the de-normalized input window.
pub struct Naive2Forecaster {
    pub m: usize,
}

impl Forecaster for Naive2Forecaster {
    fn name(&self) -> String {
        "naive2".into()
    }

    fn predict(&self, ws: &[SeriesWindow], horizon: usize, channels: usize, norm: &NormStats) -> Result<Vec<f64>> {
        let mut out = vec![0.0; ws.len() * horizon * channels];
        for (i, w) in ws.iter().enumerate() {
            for c in 0..channels {
                let raw: Vec<f64> = w.input.iter().skip(c).step_by(channels).map(|&v| norm.denormalize(v, c)).collect();
                let f = naive2_forecast(&raw, self.m, horizon)?;
                for (h, v) in f.into_iter().enumerate() {
                    out[(i * horizon + h) * channels + c] = norm.normalize(v, c);
                }
            }
        }
        Ok(out)
    }
}

impl<F: Real> Forecaster for StudentModel<F> {
    fn name(&self) -> String {
        "student".into()
    }

    fn predict(&self, ws: &[SeriesWindow], horizon: usize, channels: usize, _: &NormStats) -> Result<Vec<f64>> {
        if horizon != self.config.horizon || channels != self.config.channels {
            return Err(Error::config(format!(
                "artifact forecasts {} steps of {} channels, evaluation asks for {horizon} steps of {channels}",
                self.config.horizon, self.config.channels
            )));
        }
        let refs: Vec<&SeriesWindow> = ws.iter().collect();
        let mut out = Vec::with_capacity(ws.len() * horizon * channels);
        for chunk in refs.chunks(256) {
            let (x, _) = batch_tensors::<F>(chunk, channels)?;
            out.extend(self.predict(&x)?.to_f64_vec());
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub protocol: Protocol,
    pub lookback: usize,
    pub horizon: usize,
    pub stride: usize,
    /// Seasonal period for MASE and Naive2.
    pub season: usize,
    /// Score in original units (otherwise z-scored units).
    pub denormalize: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            protocol: Protocol::LongTerm,
            lookback: 96,
            horizon: 96,
            stride: 1,
            season: 1,
            denormalize: true,
        }
    }
}

struct Scores {
    mse: f64,
    mae: f64,
    smape: f64,
    mase: f64,
}

fn score(pred: &[f64], truth: &[f64], ins: &[Vec<Vec<f64>>], horizon: usize, channels: usize, m: usize) -> Result<Scores> {
    let mut mase_sum = 0.0;
    let mut count = 0usize;
    for (i, per_channel) in ins.iter().enumerate() {
        for (c, insample) in per_channel.iter().enumerate() {
            let idx = |h: usize| (i * horizon + h) * channels + c;
            let p: Vec<f64> = (0..horizon).map(|h| pred[idx(h)]).collect();
            let y: Vec<f64> = (0..horizon).map(|h| truth[idx(h)]).collect();
            mase_sum += metrics::mase(&p, &y, insample, m)?;
            count += 1;
        }
    }
    Ok(Scores {
        mse: mse(pred, truth)?,
        mae: mae(pred, truth)?,
        smape: smape(pred, truth)?,
        mase: mase_sum / count as f64,
    })
}

/// Score `model` on the test windows of `ds`. Short-term runs also score
/// Naive2 on the same windows and report OWA against it.
pub fn evaluate(model: &dyn Forecaster, ds: &SeriesDataset, opts: &EvalOptions) -> Result<MetricReport> {
    let ws = windows(ds, Split::Test, opts.lookback, opts.horizon, opts.stride)?;
    let norm = ds.norm()?;
    let c = ds.channels;
    let t = opts.horizon;
    let unit = |mut v: Vec<f64>| {
        if opts.denormalize {
            norm.denormalize_rows(&mut v);
        }
        v
    };
    let truth = unit(ws.iter().flat_map(|w| w.target.iter().copied()).collect());
    let pred = model.predict(&ws, t, c, norm)?;
    if pred.len() != truth.len() {
        return Err(Error::shape("predictions", &[pred.len()], &[truth.len()]));
    }
    let pred = unit(pred);
    let insample: Vec<Vec<Vec<f64>>> = ws
        .iter()
        .map(|w| {
            (0..c)
                .map(|ch| {
                    w.input
                        .iter()
                        .skip(ch)
                        .step_by(c)
                        .map(|&v| if opts.denormalize { norm.denormalize(v, ch) } else { v })
                        .collect()
                })
                .collect()
        })
        .collect();
    let s = score(&pred, &truth, &insample, t, c, opts.season)?;
    let owa = if opts.protocol == Protocol::ShortTerm {
        let n2 = unit(Naive2Forecaster { m: opts.season }.predict(&ws, t, c, norm)?);
        let r = score(&n2, &truth, &insample, t, c, opts.season)?;
        Some(owa(s.smape, s.mase, r.smape, r.mase)?)
    } else {
        None
    };
    Ok(MetricReport {
        dataset: ds.name.clone(),
        model: model.name(),
        protocol: opts.protocol.name().into(),
        horizon: Some(t),
        samples: ws.len(),
        denormalized: opts.denormalize,
        mse: s.mse,
        mae: s.mae,
        smape: s.smape,
        mase: s.mase,
        owa,
    })
}
