use std::f64::consts::PI;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::SeriesDataset;
use crate::error::{Error, Result};
use crate::numerics::rng::{rng_for, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    /// `a sin(2 pi t / p + 2 pi c / C) + b t + noise`.
    SineTrend,
    /// Gaussian noise only.
    Noise,
    /// Level shift of `amplitude` at `step_at`, plus `b t` and noise.
    Step,
}

impl std::str::FromStr for SynthKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sine_trend" => Ok(SynthKind::SineTrend),
            "noise" => Ok(SynthKind::Noise),
            "step" => Ok(SynthKind::Step),
            _ => Err(Error::config(format!("unknown synthetic kind `{s}` (expected sine_trend, noise, step)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub amplitude: f64,
    pub period: f64,
    pub trend: f64,
    /// Standard deviation of the additive Gaussian noise.
    pub noise: f64,
    /// Row of the level shift for `step`; half the length when absent.
    pub step_at: Option<usize>,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            amplitude: 1.0,
            period: 24.0,
            trend: 0.0,
            noise: 0.0,
            step_at: None,
        }
    }
}

/// Deterministic synthetic series.
pub fn synthesize(kind: SynthKind, seed: u64, length: usize, channels: usize, p: &SynthParams) -> Result<SeriesDataset> {
    if length == 0 || channels == 0 {
        return Err(Error::config("synthetic series need positive length and channel count"));
    }
    if kind == SynthKind::SineTrend && !(p.period > 0.0) {
        return Err(Error::config("sine period must be positive"));
    }
    if !(p.noise >= 0.0) {
        return Err(Error::config("noise level must be nonnegative"));
    }
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng = rng_for(seed, stream::SYNTH);
    let step_at = p.step_at.unwrap_or(length / 2);
    let mut values = Vec::with_capacity(length * channels);
    for t in 0..length {
        let tf = t as f64;
        for c in 0..channels {
            let base = match kind {
                SynthKind::SineTrend => {
                    let phase = 2.0 * PI * c as f64 / channels as f64;
                    p.amplitude * (2.0 * PI * tf / p.period + phase).sin() + p.trend * tf
                }
                SynthKind::Noise => 0.0,
                SynthKind::Step => p.amplitude * f64::from(u8::from(t >= step_at)) + p.trend * tf,
            };
            let eps = if p.noise > 0.0 { p.noise * noise.sample(&mut rng) } else { 0.0 };
            values.push(base + eps);
        }
    }
    let name = match kind {
        SynthKind::SineTrend => "synthetic_sine_trend",
        SynthKind::Noise => "synthetic_noise",
        SynthKind::Step => "synthetic_step",
    };
    SeriesDataset::new(name, values, channels)
}
