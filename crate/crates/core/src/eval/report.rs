use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metrics of one evaluation run (or a horizon average).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dataset: String,
    pub model: String,
    pub protocol: String,
    /// `None` for a horizon average.
    pub horizon: Option<usize>,
    pub samples: usize,
    pub denormalized: bool,
    pub mse: f64,
    pub mae: f64,
    pub smape: f64,
    pub mase: f64,
    pub owa: Option<f64>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.6}"))
}

impl MetricReport {
    pub fn horizon_label(&self) -> String {
        self.horizon.map_or_else(|| "avg".into(), |h| h.to_string())
    }

    pub fn to_json(reports: &[MetricReport]) -> Result<String> {
        Ok(serde_json::to_string_pretty(reports)?)
    }

    /// Aligned plain-text table.
    pub fn to_text(reports: &[MetricReport]) -> String {
        let header = ["dataset", "model", "protocol", "horizon", "samples", "mse", "mae", "smape", "mase", "owa"];
        let rows: Vec<[String; 10]> = reports
            .iter()
            .map(|r| {
                [
                    r.dataset.clone(),
                    r.model.clone(),
                    r.protocol.clone(),
                    r.horizon_label(),
                    r.samples.to_string(),
                    format!("{:.6}", r.mse),
                    format!("{:.6}", r.mae),
                    format!("{:.6}", r.smape),
                    format!("{:.6}", r.mase),
                    fmt_opt(r.owa),
                ]
            })
            .collect();
        let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
        for row in &rows {
            for (w, c) in width.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let line = |cells: Vec<&str>, out: &mut String| {
            let parts: Vec<String> = cells.iter().zip(&width).map(|(c, w)| format!("{c:<w$}")).collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(header.to_vec(), &mut out);
        for row in &rows {
            line(row.iter().map(String::as_str).collect(), &mut out);
        }
        out
    }

    /// Plot-ready per-horizon series.
    pub fn to_csv(reports: &[MetricReport]) -> String {
        let mut s = String::from("horizon,mse,mae,smape,mase,owa\n");
        for r in reports {
            let owa = r.owa.map_or(String::new(), |v| v.to_string());
            let _ = writeln!(s, "{},{},{},{},{},{}", r.horizon_label(), r.mse, r.mae, r.smape, r.mase, owa);
        }
        s
    }

    /// Write `metrics.json`, `metrics.txt` and `metrics.csv` into `dir`.
    pub fn write_all(reports: &[MetricReport], dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [
            ("metrics.json", Self::to_json(reports)?),
            ("metrics.txt", Self::to_text(reports)),
            ("metrics.csv", Self::to_csv(reports)),
        ] {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

/// Arithmetic mean of per-horizon reports.
pub fn average_reports(reports: &[MetricReport]) -> Result<MetricReport> {
    let first = reports.first().ok_or_else(|| Error::EmptyDataset("horizon reports".into()))?;
    let n = reports.len() as f64;
    let mean = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let owa = if reports.iter().all(|r| r.owa.is_some()) {
        Some(reports.iter().map(|r| r.owa.unwrap_or_default()).sum::<f64>() / n)
    } else {
        None
    };
    Ok(MetricReport {
        dataset: first.dataset.clone(),
        model: first.model.clone(),
        protocol: first.protocol.clone(),
        horizon: None,
        samples: reports.iter().map(|r| r.samples).sum(),
        denormalized: first.denormalized,
        mse: mean(|r| r.mse),
        mae: mean(|r| r.mae),
        smape: mean(|r| r.smape),
        mase: mean(|r| r.mase),
        owa,
    })
}
