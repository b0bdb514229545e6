use serde::{Deserialize, Serialize};

use super::{NormStats, SeriesDataset, Splits};
use crate::error::{Error, Result};

/// How to cut a series into train/val/test.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitSpec {
    /// Published row counts for recognized benchmark names, otherwise
    /// 70/10/20 ratios.
    #[default]
    Auto,
    Ratios([f64; 3]),
    Sizes([usize; 3]),
}

const DEFAULT_RATIOS: [f64; 3] = [0.7, 0.1, 0.2];

/// `(train, val, test)` row counts and sampling interval of the standard
/// benchmark files, keyed by a normalized dataset name.
pub fn known_sizes(name: &str) -> Option<((usize, usize, usize), &'static str)> {
    let key: String = name.chars().filter(char::is_ascii_alphanumeric).collect::<String>().to_ascii_lowercase();
    Some(match key.as_str() {
        "etth1" | "etth2" => ((8209, 2785, 2785), "1 hour"),
        "ettm1" | "ettm2" => ((34129, 11425, 11425), "15 min"),
        "weather" => ((36456, 5175, 10444), "10 min"),
        "traffic" => ((11849, 1661, 3413), "1 hour"),
        "electricity" | "ecl" => ((17981, 2537, 5165), "1 hour"),
        "ili" | "illness" | "nationalillness" => ((549, 74, 170), "1 week"),
        _ => return None,
    })
}

fn from_sizes(n: usize, (tr, va, te): (usize, usize, usize)) -> Result<Splits> {
    if tr + va + te > n {
        return Err(Error::config(format!(
            "split sizes ({tr}, {va}, {te}) need {} rows but the series has {n}",
            tr + va + te
        )));
    }
    Ok(Splits {
        train: 0..tr,
        val: tr..tr + va,
        test: tr + va..tr + va + te,
    })
}

fn from_ratios(n: usize, r: [f64; 3]) -> Result<Splits> {
    if r.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
        return Err(Error::config(format!("split ratios {r:?} must be in [0, 1] and sum to 1")));
    }
    let tr = (r[0] * n as f64 + 1e-9).floor() as usize;
    let va = (r[1] * n as f64 + 1e-9).floor() as usize;
    from_sizes(n, (tr, va, n - tr - va))
}

/// Attach chronological splits and train-split normalization statistics.
pub fn make_splits(mut ds: SeriesDataset, spec: &SplitSpec) -> Result<SeriesDataset> {
    let n = ds.len();
    let splits = match spec {
        SplitSpec::Auto => match known_sizes(&ds.name) {
            Some((sizes, granularity)) => {
                ds.granularity.get_or_insert_with(|| granularity.to_string());
                from_sizes(n, sizes)?
            }
            None => from_ratios(n, DEFAULT_RATIOS)?,
        },
        SplitSpec::Ratios(r) => from_ratios(n, *r)?,
        SplitSpec::Sizes([a, b, c]) => from_sizes(n, (*a, *b, *c))?,
    };
    if splits.train.is_empty() {
        return Err(Error::EmptyDataset(format!("{} (train split)", ds.name)));
    }
    ds.norm = Some(NormStats::fit(&ds.name, &ds.values, ds.channels, splits.train.clone())?);
    ds.splits = Some(splits);
    Ok(ds)
}
