use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::SeriesDataset;
use crate::error::{Error, Result};

fn is_time_header(h: &str) -> bool {
    matches!(h.trim().to_ascii_lowercase().as_str(), "date" | "time" | "timestamp" | "datetime")
}

/// Parse a headed CSV. A leading `date`-like column, or any first column
/// whose first cell is not numeric, is dropped. Empty and non-numeric
/// cells are errors (rows and columns are 1-based, the header is row 1).
pub fn parse_csv(name: &str, reader: impl Read) -> Result<SeriesDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Parse { row: 1, column: 0, message: e.to_string() })?
        .iter()
        .map(str::to_string)
        .collect();
    let mut skip = headers.first().is_some_and(|h| is_time_header(h));
    let mut values = Vec::new();
    let mut channels = None;
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::Parse { row, column: 0, message: e.to_string() })?;
        if i == 0 && !skip && rec.get(0).is_some_and(|c| c.parse::<f64>().is_err()) {
            skip = true;
        }
        let start = usize::from(skip);
        let n = rec.len().saturating_sub(start);
        match channels {
            None => channels = Some(n),
            Some(c) if c != n => {
                return Err(Error::Parse { row, column: rec.len(), message: format!("expected {} fields", c + start) })
            }
            _ => {}
        }
        for (j, cell) in rec.iter().enumerate().skip(start) {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: j + 1,
                message: if cell.is_empty() { "missing value".into() } else { format!("not a number: `{cell}`") },
            })?;
            if !v.is_finite() {
                return Err(Error::Parse { row, column: j + 1, message: format!("non-finite value `{cell}`") });
            }
            values.push(v);
        }
    }
    let channels = channels.unwrap_or(0);
    if values.is_empty() || channels == 0 {
        return Err(Error::EmptyDataset(name.to_string()));
    }
    let mut ds = SeriesDataset::new(name, values, channels)?;
    let start = usize::from(skip);
    if headers.len() == channels + start {
        ds.columns = headers[start..].to_vec();
    }
    log::info!("loaded `{name}`: {} rows x {} channels", ds.len(), ds.channels);
    Ok(ds)
}

/// Load a CSV file; the dataset is named after the file stem.
pub fn load_csv(path: &Path) -> Result<SeriesDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
    parse_csv(name, file)
}

/// Write a dataset as `date,<columns>` with integer time stamps.
pub fn write_csv(ds: &SeriesDataset, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut out = String::from("date");
    for c in &ds.columns {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for t in 0..ds.len() {
        out.push_str(&t.to_string());
        for v in ds.row(t) {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
