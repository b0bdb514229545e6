//! End-to-end train / export / evaluate / analyze workflows over a run
//! directory.
//!
//! A run directory holds `config.resolved.json`, `checkpoint.tllm` (with
//! its manifest), `history.csv` and `trace.json`.

use std::path::{Path, PathBuf};

use crate::analysis::{self, AttentionTrace};
use crate::checkpoint::{self, Entries, Entry};
use crate::config::RunConfig;
use crate::data::{batch_tensors, windows, NormStats, SeriesDataset, SeriesWindow, Split};
use crate::distill::{history_csv, DistillLossReport, EpochRecord, TrainData, TrainObserver, Trainer};
use crate::error::{Error, Result};
use crate::eval::{self, EvalOptions, Forecaster, MetricReport};
use crate::model::{JointModel, StudentModel};
use crate::numerics::Real;

pub const CHECKPOINT: &str = "checkpoint.tllm";
pub const HISTORY: &str = "history.csv";
pub const TRACE: &str = "trace.json";
pub const RESOLVED_CONFIG: &str = "config.resolved.json";
pub const ANALYSIS_DIR: &str = "analysis";

fn write(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Outcome of [`train_run`].
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub output_dir: PathBuf,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
    pub best_epoch: usize,
    pub dataset: SeriesDataset,
}

struct RunWriter<'a> {
    dir: &'a Path,
    extra: Vec<Entry>,
    probe: Option<Vec<SeriesWindow>>,
    channels: usize,
    trace: AttentionTrace,
    on_batch: &'a mut dyn FnMut(usize, &DistillLossReport),
}

impl RunWriter<'_> {
    fn persist<F: Real>(&self, t: &Trainer<F>) -> Result<()> {
        let mut entries = t.entries()?;
        entries.extend(self.extra.iter().cloned());
        checkpoint::save(&self.dir.join(CHECKPOINT), &entries)?;
        write(&self.dir.join(HISTORY), history_csv(&t.state.history))?;
        if self.probe.is_some() {
            write(&self.dir.join(TRACE), serde_json::to_string(&self.trace)?)?;
        }
        Ok(())
    }

    fn record<F: Real>(&mut self, model: &JointModel<F>, epoch: usize) -> Result<()> {
        if let Some(probe) = &self.probe {
            let refs: Vec<&SeriesWindow> = probe.iter().collect();
            let (x, _) = batch_tensors::<F>(&refs, self.channels)?;
            self.trace.snapshots.push(analysis::snapshot(model, &x, epoch)?);
        }
        Ok(())
    }
}

impl<F: Real> TrainObserver<F> for RunWriter<'_> {
    fn batch(&mut self, epoch: usize, r: &DistillLossReport) {
        (self.on_batch)(epoch, r);
    }

    fn epoch_end(&mut self, t: &Trainer<F>) -> Result<()> {
        self.record(&t.model, t.state.epoch)?;
        self.persist(t)
    }
}

fn norm_entries(n: &NormStats) -> [Entry; 2] {
    [Entry::f64s("norm.mean", &n.mean), Entry::f64s("norm.std", &n.std)]
}

/// Train per `cfg`, writing every artifact into `cfg.output_dir`. With
/// `resume`, an unfinished checkpoint there is continued.
pub fn train_run<F: Real>(cfg: &RunConfig, resume: bool) -> Result<TrainSummary> {
    train_run_observed::<F>(cfg, resume, &mut |_, _| {})
}

/// [`train_run`] that also hands every batch's loss report to `on_batch`.
pub fn train_run_observed<F: Real>(
    cfg: &RunConfig,
    resume: bool,
    on_batch: &mut dyn FnMut(usize, &DistillLossReport),
) -> Result<TrainSummary> {
    cfg.validate()?;
    let dir = cfg.output_dir.as_path();
    let ds = cfg.training_dataset()?;
    let (l, t) = (cfg.model.lookback, cfg.model.horizon);
    let data = TrainData {
        train: windows(&ds, Split::Train, l, t, cfg.data.stride)?,
        val: windows(&ds, Split::Val, l, t, cfg.data.stride)?,
        channels: ds.channels,
    };
    write(&dir.join(RESOLVED_CONFIG), cfg.to_json()?)?;
    let settings = cfg.train_settings(&ds.name);

    let ckpt = dir.join(CHECKPOINT);
    let mut trainer = if resume && ckpt.exists() {
        let entries = Entries(checkpoint::load(&ckpt)?);
        log::info!("resuming from {}", ckpt.display());
        Trainer::<F>::from_entries(&entries, settings)?
    } else {
        Trainer::new(JointModel::<F>::new(cfg.model.clone(), cfg.seed, None)?, settings)?
    };

    let mut writer = RunWriter {
        dir,
        extra: {
            let mut v = vec![Entry::bytes("meta.run", cfg.to_json()?.as_bytes())];
            v.extend(norm_entries(ds.norm()?));
            v
        },
        probe: cfg
            .analysis
            .trace
            .then(|| data.val.iter().take(cfg.analysis.probe_size.max(1)).cloned().collect()),
        channels: ds.channels,
        trace: AttentionTrace::default(),
        on_batch,
    };
    if resume && dir.join(TRACE).exists() {
        let text = std::fs::read_to_string(dir.join(TRACE)).map_err(|e| Error::io(dir.join(TRACE), e))?;
        writer.trace = serde_json::from_str(&text)?;
    }
    trainer.run(&data, &mut writer)?;
    writer.persist(&trainer)?;
    Ok(TrainSummary {
        output_dir: dir.to_path_buf(),
        history: trainer.state.history.clone(),
        stopped_early: trainer.state.stopped,
        best_epoch: trainer.state.best_epoch,
        dataset: ds,
    })
}

/// Joint model and training statistics from a finished checkpoint.
pub fn load_finished<F: Real>(path: &Path) -> Result<(JointModel<F>, Option<NormStats>)> {
    let entries = Entries(checkpoint::load(path)?);
    if entries.text("meta.kind")? != "joint" {
        return Err(Error::Checkpoint(format!("{} is not a training checkpoint", path.display())));
    }
    if !entries.flag("meta.finished") {
        return Err(Error::Refused(format!(
            "{} holds an unfinished training run; resume it with `train --resume` before exporting",
            path.display()
        )));
    }
    let model = JointModel::from_entries(&entries)?;
    let norm = match (entries.get("norm.mean"), entries.get("norm.std")) {
        (Some(m), Some(s)) => Some(NormStats {
            mean: m.to_tensor::<f64>()?.into_data(),
            std: s.to_tensor::<f64>()?.into_data(),
        }),
        _ => None,
    };
    Ok((model, norm))
}

/// Parameter counts reported by [`export`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExportCounts {
    pub total: usize,
    pub trainable: usize,
    /// Teacher and guidance scalars left behind.
    pub removed: usize,
}

/// Write the student-only artifact of a finished checkpoint.
pub fn export<F: Real>(checkpoint_path: &Path, out: &Path, merge_lora: bool) -> Result<ExportCounts> {
    let (joint, norm) = load_finished::<F>(checkpoint_path)?;
    let student = joint.export_student(norm, merge_lora)?;
    student.save(out)?;
    let total = student.store.count_elements(|_| true);
    Ok(ExportCounts {
        total,
        trainable: student.store.count_elements(|p| p.trainable),
        removed: joint.count("teacher.") + joint.count("guide."),
    })
}

/// Which forecaster `evaluate_run` scores.
#[derive(Debug, Clone, PartialEq)]
pub enum EvalModel {
    /// Student artifact path; `{T}` is replaced by the horizon.
    Artifact(String),
    Oracle,
    RepeatLast,
    Naive2,
}

/// Score `model` on `ds` at each horizon; more than one horizon appends
/// their average.
pub fn evaluate_run<F: Real>(
    model: &EvalModel,
    ds: &SeriesDataset,
    horizons: &[usize],
    base: &EvalOptions,
) -> Result<Vec<MetricReport>> {
    if horizons.is_empty() {
        return Err(Error::config("no horizons to evaluate"));
    }
    let mut reports = Vec::new();
    for &h in horizons {
        let mut opts = base.clone();
        opts.horizon = h;
        let report = match model {
            EvalModel::Artifact(pattern) => {
                let path = PathBuf::from(pattern.replace("{T}", &h.to_string()));
                let student = StudentModel::<F>::load(&path)?;
                opts.lookback = student.config.lookback;
                eval::evaluate(&student as &dyn Forecaster, ds, &opts)?
            }
            EvalModel::Oracle => eval::evaluate(&eval::OracleForecaster, ds, &opts)?,
            EvalModel::RepeatLast => eval::evaluate(&eval::RepeatLast, ds, &opts)?,
            EvalModel::Naive2 => eval::evaluate(&eval::Naive2Forecaster { m: opts.season }, ds, &opts)?,
        };
        reports.push(report);
    }
    if reports.len() > 1 {
        let avg = eval::average_reports(&reports)?;
        reports.push(avg);
    }
    Ok(reports)
}

/// Heatmap CSVs from a run's attention trace into `{run}/analysis/`.
pub fn analyze_run(run: &Path) -> Result<Vec<PathBuf>> {
    let p = run.join(TRACE);
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let trace: AttentionTrace = serde_json::from_str(&text)?;
    let worst = trace.snapshots.iter().map(|s| s.max_row_sum_error()).fold(0.0, f64::max);
    if worst > 1e-6 {
        log::warn!("attention rows deviate from unit sum by up to {worst:e}");
    }
    let dir = run.join(ANALYSIS_DIR);
    analysis::heatmaps(&trace)?
        .iter()
        .map(|(grid, metric)| grid.write(&dir, metric))
        .collect()
}
