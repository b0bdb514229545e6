use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Rows (layers or groups) by columns (epochs).
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapGrid {
    /// `layer` or `group`.
    pub row_kind: String,
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl HeatmapGrid {
    pub fn to_csv(&self) -> Result<String> {
        if self.rows.is_empty() || self.columns.is_empty() {
            return Err(Error::Refused("heatmap grid is empty".into()));
        }
        if self.values.len() != self.rows.len() || self.values.iter().any(|r| r.len() != self.columns.len()) {
            return Err(Error::shape("heatmap", &[self.rows.len(), self.columns.len()], &[self.values.len()]));
        }
        let mut s = self.row_kind.clone();
        for c in &self.columns {
            s.push(',');
            s.push_str(c);
        }
        s.push('\n');
        for (label, row) in self.rows.iter().zip(&self.values) {
            s.push_str(label);
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        Ok(s)
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines.next().ok_or_else(|| Error::EmptyDataset("heatmap".into()))?.split(',').collect();
        let mut grid = HeatmapGrid {
            row_kind: header[0].to_string(),
            rows: Vec::new(),
            columns: header[1..].iter().map(|s| s.to_string()).collect(),
            values: Vec::new(),
        };
        for (i, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != header.len() {
                return Err(Error::Parse { row: i + 2, column: f.len(), message: "ragged heatmap row".into() });
            }
            grid.rows.push(f[0].to_string());
            grid.values.push(
                f[1..]
                    .iter()
                    .enumerate()
                    .map(|(j, v)| {
                        v.parse().map_err(|_| Error::Parse { row: i + 2, column: j + 2, message: format!("`{v}`") })
                    })
                    .collect::<Result<_>>()?,
            );
        }
        Ok(grid)
    }

    /// Write to `{dir}/{row_kind}_{metric}.csv`.
    pub fn write(&self, dir: &Path, metric: &str) -> Result<std::path::PathBuf> {
        let body = self.to_csv()?;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(format!("{}_{metric}.csv", self.row_kind));
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
