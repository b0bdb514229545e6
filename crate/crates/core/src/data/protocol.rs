use super::{NormStats, SeriesDataset};
use crate::error::{Error, Result};

/// Keep `floor(fraction * n)` training rows (the earliest, or the latest
/// with `tail`) and refit the statistics. Validation and test are untouched.
pub fn fewshot_take(ds: &SeriesDataset, fraction: f64, tail: bool) -> Result<SeriesDataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config(format!("few-shot fraction {fraction} must lie in (0, 1]")));
    }
    let mut out = ds.clone();
    let splits = out.splits.as_mut().ok_or_else(|| Error::config("few-shot needs a split dataset"))?;
    let n = splits.train.len();
    let keep = (fraction * n as f64 + 1e-9).floor() as usize;
    let keep = keep.min(n);
    if keep == 0 {
        return Err(Error::EmptyDataset(format!("{} (few-shot train split)", ds.name)));
    }
    splits.train = if tail {
        splits.train.end - keep..splits.train.end
    } else {
        splits.train.start..splits.train.start + keep
    };
    let train = splits.train.clone();
    out.norm = Some(NormStats::fit(&out.name, &out.values, out.channels, train)?);
    Ok(out)
}

/// A model trained on `source` and scored on the test split of `target`,
/// normalized with the target's own train statistics.
#[derive(Debug, Clone)]
pub struct ZeroShotBinding {
    pub source: SeriesDataset,
    pub target: SeriesDataset,
}

pub fn zeroshot_pair(source: SeriesDataset, target: SeriesDataset) -> Result<ZeroShotBinding> {
    if source.channels != target.channels {
        return Err(Error::Refused(format!(
            "zero-shot transfer from `{}` ({} channels) to `{}` ({} channels) needs equal channel counts",
            source.name, source.channels, target.name, target.channels
        )));
    }
    target.splits()?;
    target.norm()?;
    Ok(ZeroShotBinding { source, target })
}
