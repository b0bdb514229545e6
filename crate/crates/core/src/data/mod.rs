//! CSV ingestion, chronological splits, normalization, sliding windows,
//! few-shot/zero-shot protocol helpers and synthetic series.

mod csv_io;
mod protocol;
mod splits;
mod synth;
mod windows;

use std::ops::Range;

use serde::{Deserialize, Serialize};

pub use csv_io::{load_csv, parse_csv, write_csv};
pub use protocol::{fewshot_take, zeroshot_pair, ZeroShotBinding};
pub use splits::{known_sizes, make_splits, SplitSpec};
pub use synth::{synthesize, SynthKind, SynthParams};
pub use windows::{batch_tensors, windows, SeriesWindow};

/// Per-channel z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Population mean/std of `rows` of a row-major `time x channels`
    /// matrix. Constant channels are rejected.
    pub fn fit(name: &str, values: &[f64], channels: usize, rows: Range<usize>) -> crate::Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(crate::Error::EmptyDataset(name.to_string()));
        }
        let mut mean = vec![0.0; channels];
        for t in rows.clone() {
            for c in 0..channels {
                mean[c] += values[t * channels + c];
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; channels];
        for t in rows {
            for c in 0..channels {
                let d = values[t * channels + c] - mean[c];
                var[c] += d * d;
            }
        }
        let mut std = Vec::with_capacity(channels);
        for (c, v) in var.into_iter().enumerate() {
            let s = (v / n as f64).sqrt();
            if !(s > 1e-12 * mean[c].abs().max(1.0)) {
                return Err(crate::Error::ConstantChannel {
                    dataset: name.to_string(),
                    channel: c,
                });
            }
            std.push(s);
        }
        Ok(NormStats { mean, std })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, v: f64, c: usize) -> f64 {
        (v - self.mean[c]) / self.std[c]
    }

    pub fn denormalize(&self, v: f64, c: usize) -> f64 {
        v * self.std[c] + self.mean[c]
    }

    /// Undo normalization in place on row-major data whose last axis is
    /// the channel axis.
    pub fn denormalize_rows(&self, data: &mut [f64]) {
        let c = self.channels();
        for (i, v) in data.iter_mut().enumerate() {
            *v = self.denormalize(*v, i % c);
        }
    }
}

/// Chronological, contiguous, non-overlapping row ranges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl Splits {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }

    pub fn get(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => self.train.clone(),
            Split::Val => self.val.clone(),
            Split::Test => self.test.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// A multivariate series with optional splits and train statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesDataset {
    pub name: String,
    /// Row-major `time x channels`.
    pub values: Vec<f64>,
    pub channels: usize,
    pub columns: Vec<String>,
    pub granularity: Option<String>,
    pub splits: Option<Splits>,
    pub norm: Option<NormStats>,
}

impl SeriesDataset {
    pub fn new(name: impl Into<String>, values: Vec<f64>, channels: usize) -> crate::Result<Self> {
        let name = name.into();
        if channels == 0 || values.is_empty() {
            return Err(crate::Error::EmptyDataset(name));
        }
        if values.len() % channels != 0 {
            return Err(crate::Error::shape("dataset", &[values.len()], &[channels]));
        }
        Ok(SeriesDataset {
            columns: (0..channels).map(|c| format!("ch{c}")).collect(),
            name,
            values,
            channels,
            granularity: None,
            splits: None,
            norm: None,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.channels..(t + 1) * self.channels]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.len()).map(|t| self.values[t * self.channels + c]).collect()
    }

    pub fn splits(&self) -> crate::Result<&Splits> {
        self.splits
            .as_ref()
            .ok_or_else(|| crate::Error::config(format!("dataset `{}` has no splits", self.name)))
    }

    pub fn norm(&self) -> crate::Result<&NormStats> {
        self.norm
            .as_ref()
            .ok_or_else(|| crate::Error::config(format!("dataset `{}` has no normalization statistics", self.name)))
    }
}
