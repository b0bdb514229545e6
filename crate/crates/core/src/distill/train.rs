//! Joint training loop with teacher-convergence early stopping.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{mase_scales, total_loss, DistillLossReport, LossInputs, LossSchedule, LossWeights};
use crate::checkpoint::{Entries, Entry};
use crate::data::{batch_tensors, SeriesWindow};
use crate::error::{Error, Result};
use crate::model::JointModel;
use crate::numerics::rng::{rng_for_indexed, stream};
use crate::numerics::{Adam, AdamConfig, LossKind, Real, Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub weights: LossWeights,
    pub schedule: LossSchedule,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Data-parallel shards per batch.
    pub threads: usize,
    pub detach_teacher: bool,
    /// Seasonal lag of the MASE denominators.
    pub season: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            weights: LossWeights::default(),
            schedule: super::loss::loss_schedule_for_task(super::loss::Task::LongTermOther),
            adam: AdamConfig::default(),
            batch_size: 32,
            max_epochs: 100,
            patience: 3,
            seed: 0,
            threads: 1,
            detach_teacher: true,
            season: 1,
        }
    }
}

/// One row of the training history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_teach: f64,
    pub l_imit: f64,
    pub l_guide: f64,
    pub l_stud: f64,
    pub total: f64,
    pub val_teacher: f64,
    pub val_student: f64,
}

pub const HISTORY_HEADER: &str = "epoch,l_teach,l_imit,l_guide,l_stud,total,val_teacher,val_student";

/// CSV rendering of the history (shortest round-trip float formatting).
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = format!("{HISTORY_HEADER}\n");
    for r in history {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.epoch, r.l_teach, r.l_imit, r.l_guide, r.l_stud, r.total, r.val_teacher, r.val_student
        ));
    }
    s
}

pub fn parse_history(text: &str) -> Result<Vec<EpochRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = |column: usize| Error::Parse { row: i + 1, column, message: "bad history field".into() };
        if f.len() != 8 {
            return Err(bad(f.len()));
        }
        let num = |j: usize| f[j].parse::<f64>().map_err(|_| bad(j + 1));
        out.push(EpochRecord {
            epoch: f[0].parse().map_err(|_| bad(1))?,
            l_teach: num(1)?,
            l_imit: num(2)?,
            l_guide: num(3)?,
            l_stud: num(4)?,
            total: num(5)?,
            val_teacher: num(6)?,
            val_student: num(7)?,
        });
    }
    Ok(out)
}

/// Epoch at which the patience rule halts training on a sequence of
/// teacher validation losses (1-based), or `None` if it never fires.
pub fn stop_epoch(val_teacher: &[f64], patience: usize) -> Option<usize> {
    let mut stopper = EarlyStopping::default();
    val_teacher
        .iter()
        .enumerate()
        .find_map(|(i, &v)| stopper.update(v, patience).then_some(i + 1))
}

/// Patience counter over teacher validation loss; only a strict decrease
/// counts as improvement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub best: f64,
    pub bad_epochs: usize,
}

impl Default for EarlyStopping {
    fn default() -> Self {
        EarlyStopping {
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }
}

impl EarlyStopping {
    /// Record one epoch; true when training should stop.
    pub fn update(&mut self, val: f64, patience: usize) -> bool {
        if val < self.best {
            self.best = val;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        self.bad_epochs >= patience
    }
}

/// Train and validation windows of one run.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub train: Vec<SeriesWindow>,
    pub val: Vec<SeriesWindow>,
    pub channels: usize,
}

/// Progress that survives a restart.
#[derive(Debug, Clone)]
pub struct TrainState<F> {
    /// Completed epochs.
    pub epoch: usize,
    pub stopping: EarlyStopping,
    pub best_student: f64,
    pub best_epoch: usize,
    /// Trainable values at the best student epoch, by registry position.
    pub best_params: Vec<Option<Tensor<F>>>,
    pub history: Vec<EpochRecord>,
    pub calibrated: bool,
    pub stopped: bool,
    pub finished: bool,
}

impl<F> Default for TrainState<F> {
    fn default() -> Self {
        TrainState {
            epoch: 0,
            stopping: EarlyStopping::default(),
            best_student: f64::INFINITY,
            best_epoch: 0,
            best_params: Vec::new(),
            history: Vec::new(),
            calibrated: false,
            stopped: false,
            finished: false,
        }
    }
}

/// Hooks invoked by [`Trainer::run`].
pub trait TrainObserver<F: Real> {
    fn batch(&mut self, _epoch: usize, _report: &DistillLossReport) {}
    fn epoch_end(&mut self, _trainer: &Trainer<F>) -> Result<()> {
        Ok(())
    }
}

impl<F: Real> TrainObserver<F> for () {}

pub struct Trainer<F: Real> {
    pub model: JointModel<F>,
    pub adam: Adam<F>,
    pub settings: TrainSettings,
    pub state: TrainState<F>,
}

type ShardResult<F> = (Vec<Option<Tensor<F>>>, DistillLossReport);

impl<F: Real> Trainer<F> {
    pub fn new(model: JointModel<F>, settings: TrainSettings) -> Result<Self> {
        if settings.batch_size == 0 || settings.threads == 0 {
            return Err(Error::config("batch size and thread count must be positive"));
        }
        let adam = Adam::new(settings.adam, &model.store);
        Ok(Trainer {
            model,
            adam,
            settings,
            state: TrainState::default(),
        })
    }

    fn shard_step(&self, ws: &[&SeriesWindow], channels: usize) -> Result<ShardResult<F>> {
        let (x, y) = batch_tensors::<F>(ws, channels)?;
        let s = &self.settings;
        let needs_scale = [s.schedule.teach, s.schedule.stud, s.schedule.imit].contains(&LossKind::Mase);
        let scale = if needs_scale { Some(mase_scales(&x, s.season)?) } else { None };
        let m = &self.model;
        let mut tape = Tape::with_params(&m.store);
        let out = m.forward(&mut tape, &x)?;
        let target = tape.constant(y);
        let pairs = m.guidance_pairs(&mut tape, &out)?;
        let inputs = LossInputs {
            teacher_pred: out.teacher.pred,
            student_pred: out.student.pred,
            target,
            guidance: &pairs,
            mase_scale: scale.as_deref(),
        };
        let (total, report) = total_loss(&mut tape, inputs, &s.weights, &s.schedule, s.detach_teacher)?;
        if !report.total.is_finite() {
            let culprit = tape.first_non_finite().unwrap_or_else(|| "total loss".into());
            return Err(Error::NonFinite(culprit));
        }
        let grads = tape.backward(total)?;
        Ok((grads.into_params(), report))
    }

    /// Gradients and loss report of one batch, sharded over
    /// `settings.threads` with a fixed reduction order.
    pub fn batch_gradients(&self, ws: &[&SeriesWindow], channels: usize) -> Result<ShardResult<F>> {
        let shards = self.settings.threads.min(ws.len()).max(1);
        if shards == 1 {
            return self.shard_step(ws, channels);
        }
        let per = ws.len().div_ceil(shards);
        let chunks: Vec<&[&SeriesWindow]> = ws.chunks(per).collect();
        let results: Vec<Result<ShardResult<F>>> = std::thread::scope(|sc| {
            let handles: Vec<_> = chunks
                .iter()
                .map(|c| sc.spawn(move || self.shard_step(c, channels)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("shard thread panicked")).collect()
        });
        let b = ws.len() as f64;
        let mut grads: Vec<Option<Tensor<F>>> = Vec::new();
        let mut report = DistillLossReport::default();
        for (chunk, r) in chunks.iter().zip(results) {
            let (g, rep) = r?;
            let w = chunk.len() as f64 / b;
            report = report.combine(1.0, &rep, w);
            if grads.len() < g.len() {
                grads.resize(g.len(), None);
            }
            for (acc, g) in grads.iter_mut().zip(g) {
                let Some(g) = g else { continue };
                let g = g.map(|v| v * F::lit(w));
                *acc = Some(match acc.take() {
                    Some(mut a) => {
                        a.data_mut().iter_mut().zip(g.data()).for_each(|(a, &b)| *a = *a + b);
                        a
                    }
                    None => g,
                });
            }
        }
        Ok((grads, report))
    }

    /// Set the spectral thresholds from the teacher input of `ws`.
    pub fn calibrate(&mut self, ws: &[&SeriesWindow], channels: usize) -> Result<()> {
        let (x, _) = batch_tensors::<F>(ws, channels)?;
        let e1 = self.model.teacher_input(&x)?;
        self.model.teacher.calibrate_thresholds(&mut self.model.store, &e1)?;
        self.state.calibrated = true;
        Ok(())
    }

    /// Mean teacher and student validation losses over `val`.
    pub fn validate(&self, val: &[SeriesWindow], channels: usize) -> Result<(f64, f64)> {
        if val.is_empty() {
            return Err(Error::EmptyDataset("validation windows".into()));
        }
        let s = &self.settings;
        let needs_scale = [s.schedule.teach, s.schedule.stud].contains(&LossKind::Mase);
        let (mut vt, mut vs) = (0.0, 0.0);
        let refs: Vec<&SeriesWindow> = val.iter().collect();
        for chunk in refs.chunks(s.batch_size) {
            let (x, y) = batch_tensors::<F>(chunk, channels)?;
            let scale = if needs_scale { Some(mase_scales(&x, s.season)?) } else { None };
            let mut tape = Tape::with_params(&self.model.store);
            let out = self.model.forward(&mut tape, &x)?;
            let target = tape.constant(y);
            let t = tape.loss(out.teacher.pred, target, s.schedule.teach, scale.as_deref())?;
            let st = tape.loss(out.student.pred, target, s.schedule.stud, scale.as_deref())?;
            let w = chunk.len() as f64;
            vt += w * tape.value(t).item().as_f64();
            vs += w * tape.value(st).item().as_f64();
        }
        let n = val.len() as f64;
        Ok((vt / n, vs / n))
    }

    /// One pass over the shuffled training windows followed by
    /// validation; returns the history row.
    pub fn run_epoch(&mut self, data: &TrainData, observer: &mut dyn TrainObserver<F>) -> Result<EpochRecord> {
        if data.train.is_empty() {
            return Err(Error::EmptyDataset("training windows".into()));
        }
        let epoch = self.state.epoch + 1;
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut rng_for_indexed(self.settings.seed, stream::SHUFFLE, epoch as u64));
        let mut sum = DistillLossReport::default();
        for idx in order.chunks(self.settings.batch_size) {
            let ws: Vec<&SeriesWindow> = idx.iter().map(|&i| &data.train[i]).collect();
            if !self.state.calibrated {
                self.calibrate(&ws, data.channels)?;
            }
            let (grads, report) = self.batch_gradients(&ws, data.channels)?;
            observer.batch(epoch, &report);
            sum = sum.combine(1.0, &report, ws.len() as f64);
            self.adam.apply(&mut self.model.store, &grads);
        }
        let mean = sum.combine(1.0 / data.train.len() as f64, &DistillLossReport::default(), 0.0);
        let (val_teacher, val_student) = self.validate(&data.val, data.channels)?;
        let rec = EpochRecord {
            epoch,
            l_teach: mean.l_teach,
            l_imit: mean.l_imit,
            l_guide: mean.l_guide,
            l_stud: mean.l_stud,
            total: mean.total,
            val_teacher,
            val_student,
        };
        self.state.epoch = epoch;
        self.state.history.push(rec);
        if val_student < self.state.best_student {
            self.state.best_student = val_student;
            self.state.best_epoch = epoch;
            self.state.best_params = self.trainable_snapshot();
        }
        self.state.stopped = self.state.stopping.update(val_teacher, self.settings.patience);
        log::info!(
            "epoch {epoch}: total {:.6} teach {:.6} imit {:.6} stud {:.6} | val teacher {:.6} student {:.6}",
            rec.total,
            rec.l_teach,
            rec.l_imit,
            rec.l_stud,
            val_teacher,
            val_student
        );
        Ok(rec)
    }

    fn trainable_snapshot(&self) -> Vec<Option<Tensor<F>>> {
        self.model
            .store
            .iter()
            .map(|(_, p)| p.trainable.then(|| p.value.clone()))
            .collect()
    }

    /// Train until the epoch budget is spent or the teacher stops
    /// improving, then restore the best student epoch.
    pub fn run(&mut self, data: &TrainData, observer: &mut dyn TrainObserver<F>) -> Result<()> {
        while !self.state.finished && !self.state.stopped && self.state.epoch < self.settings.max_epochs {
            self.run_epoch(data, observer)?;
            observer.epoch_end(self)?;
        }
        if self.state.stopped {
            log::info!("teacher validation loss stalled; stopped after epoch {}", self.state.epoch);
        }
        self.finish();
        Ok(())
    }

    /// Restore the best student snapshot (if any) and mark the run done.
    pub fn finish(&mut self) {
        if !self.state.finished {
            let snap = std::mem::take(&mut self.state.best_params);
            let ids: Vec<_> = self.model.store.ids().collect();
            for (id, v) in ids.into_iter().zip(snap) {
                if let Some(v) = v {
                    *self.model.store.value_mut(id) = v;
                }
            }
            self.state.finished = true;
        }
    }

    /// Joint checkpoint: model, optimizer moments, history and
    /// resumption state.
    pub fn entries(&self) -> Result<Vec<Entry>> {
        let mut v = self.model.entries()?;
        let st = &self.state;
        v.push(Entry::bytes("meta.finished", &[u8::from(st.finished)]));
        v.push(Entry::bytes("meta.history", history_csv(&st.history).as_bytes()));
        v.push(Entry::f64s(
            "train.state",
            &[
                st.epoch as f64,
                st.stopping.best,
                st.stopping.bad_epochs as f64,
                st.best_student,
                st.best_epoch as f64,
                f64::from(u8::from(st.calibrated)),
                f64::from(u8::from(st.stopped)),
            ],
        ));
        v.push(Entry::f64s("optim.step", &[self.adam.step as f64]));
        for (idx, (_, p)) in self.model.store.iter().enumerate() {
            if let Some((m, s)) = &self.adam.moments[idx] {
                v.push(Entry::from_tensor(format!("optim.m.{}", p.name), m, false));
                v.push(Entry::from_tensor(format!("optim.v.{}", p.name), s, false));
            }
            if let Some(Some(b)) = st.best_params.get(idx) {
                v.push(Entry::from_tensor(format!("best.{}", p.name), b, false));
            }
        }
        Ok(v)
    }

    /// Resume from [`Trainer::entries`] output.
    pub fn from_entries(entries: &Entries, settings: TrainSettings) -> Result<Self> {
        let model = JointModel::<F>::from_entries(entries)?;
        let mut t = Trainer::new(model, settings)?;
        let s = entries.require("train.state")?.to_tensor::<f64>()?.into_data();
        if s.len() != 7 {
            return Err(Error::Checkpoint("train.state has the wrong length".into()));
        }
        t.state.epoch = s[0] as usize;
        t.state.stopping = EarlyStopping {
            best: s[1],
            bad_epochs: s[2] as usize,
        };
        t.state.best_student = s[3];
        t.state.best_epoch = s[4] as usize;
        t.state.calibrated = s[5] != 0.0;
        t.state.stopped = s[6] != 0.0;
        t.state.finished = entries.flag("meta.finished");
        t.state.history = parse_history(&entries.text("meta.history")?)?;
        t.adam.step = entries.require("optim.step")?.to_tensor::<f64>()?.item() as u64;
        let names: Vec<String> = t.model.store.iter().map(|(_, p)| p.name.clone()).collect();
        t.state.best_params = vec![None; names.len()];
        for (idx, name) in names.iter().enumerate() {
            if let Some(slot) = t.adam.moments[idx].as_mut() {
                slot.0 = entries.require(&format!("optim.m.{name}"))?.to_tensor()?;
                slot.1 = entries.require(&format!("optim.v.{name}"))?.to_tensor()?;
            }
            if let Some(b) = entries.get(&format!("best.{name}")) {
                t.state.best_params[idx] = Some(b.to_tensor()?);
            }
        }
        Ok(t)
    }
}
