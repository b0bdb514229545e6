//! Declarative run configuration.

use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{self, SeriesDataset, SplitSpec, SynthKind, SynthParams};
use crate::distill::{loss_schedule_for_task, LossWeights, Task, TrainSettings};
use crate::error::{Error, Result};
use crate::eval::Protocol;
use crate::model::ModelConfig;
use crate::numerics::AdamConfig;

/// Environment variable naming the fallback root for relative dataset
/// paths.
pub const DATA_DIR_ENV: &str = "TLLM_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl std::str::FromStr for Precision {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(Error::config(format!("unknown precision `{s}` (expected f32 or f64)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Csv {
        path: PathBuf,
    },
    Synthetic {
        generator: SynthKind,
        length: usize,
        channels: usize,
        #[serde(default)]
        params: SynthParams,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            generator: SynthKind::SineTrend,
            length: 2000,
            channels: 7,
            params: SynthParams::default(),
        }
    }
}

/// Resolve a dataset path: as given, else under `TLLM_DATA_DIR`.
pub fn resolve_data_path(path: &Path) -> Result<PathBuf> {
    if path.exists() {
        return Ok(path.to_path_buf());
    }
    if path.is_relative() {
        if let Some(root) = std::env::var_os(DATA_DIR_ENV) {
            let p = Path::new(&root).join(path);
            if p.exists() {
                return Ok(p);
            }
        }
    }
    Err(Error::config(format!("dataset file not found: {}", path.display())))
}

impl DataSource {
    /// Raw series (no splits yet).
    pub fn load(&self, seed: u64) -> Result<SeriesDataset> {
        match self {
            DataSource::Csv { path } => data::load_csv(&resolve_data_path(path)?),
            DataSource::Synthetic {
                generator,
                length,
                channels,
                params,
            } => data::synthesize(*generator, seed, *length, *channels, params),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub split: SplitSpec,
    pub stride: usize,
    pub fewshot_fraction: f64,
    pub fewshot_tail: bool,
    /// Evaluation dataset of the zero-shot protocol.
    pub target: Option<DataSource>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::default(),
            split: SplitSpec::Auto,
            stride: 1,
            fewshot_fraction: 0.1,
            fewshot_tail: false,
            target: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub weights: LossWeights,
    /// Derived from the dataset name and protocol when absent.
    pub task: Option<Task>,
    pub detach_teacher: bool,
    /// Seasonal period for MASE and Naive2.
    pub season: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            weights: LossWeights::default(),
            task: None,
            detach_teacher: true,
            season: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        let a = AdamConfig::default();
        OptimConfig {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            batch_size: 32,
            max_epochs: 100,
            patience: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Record student attention on a fixed probe batch every epoch.
    pub trace: bool,
    /// Probe windows, taken from the start of the validation split.
    pub probe_size: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            trace: true,
            probe_size: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub protocol: Protocol,
    pub threads: usize,
    pub precision: Precision,
    /// Score in original units (z-scored units otherwise).
    pub denormalize: bool,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub analysis: AnalysisConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            protocol: Protocol::LongTerm,
            threads: 1,
            precision: Precision::F32,
            denormalize: true,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            optim: OptimConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parse JSON that may contain `//` and `/* */` comments.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut clean = String::new();
        json_comments::StripComments::new(text.as_bytes())
            .read_to_string(&mut clean)
            .map_err(|e| Error::config(format!("cannot strip comments: {e}")))?;
        serde_json::from_str(&clean).map_err(|e| Error::config(format!("invalid run config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Snapshot with every default materialized.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Every violated constraint.
    pub fn problems(&self) -> Vec<String> {
        let mut p = self.model.problems();
        let o = &self.optim;
        if !(o.lr > 0.0) {
            p.push("optim.lr must be positive".into());
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            p.push("optim.beta1 and optim.beta2 must lie in [0, 1)".into());
        }
        if !(o.eps > 0.0) {
            p.push("optim.eps must be positive".into());
        }
        if o.batch_size == 0 {
            p.push("optim.batch_size must be positive".into());
        }
        if o.patience == 0 {
            p.push("optim.patience must be positive".into());
        }
        if self.threads == 0 {
            p.push("threads must be at least 1".into());
        }
        let w = &self.loss.weights;
        if [w.lambda1, w.lambda2, w.lambda3].iter().any(|&x| !(x >= 0.0)) {
            p.push("loss weights must be nonnegative".into());
        }
        if self.loss.season == 0 {
            p.push("loss.season must be at least 1".into());
        } else if self.loss.season >= self.model.lookback {
            p.push("loss.season must be smaller than model.lookback".into());
        }
        let d = &self.data;
        if d.stride == 0 {
            p.push("data.stride must be positive".into());
        }
        if !(d.fewshot_fraction > 0.0 && d.fewshot_fraction <= 1.0) {
            p.push("data.fewshot_fraction must lie in (0, 1]".into());
        }
        for (what, src) in [("data.source", Some(&d.source)), ("data.target", d.target.as_ref())] {
            if let Some(DataSource::Synthetic { length, channels, params, .. }) = src {
                if *channels != self.model.channels {
                    p.push(format!("{what} has {channels} channels but model.channels is {}", self.model.channels));
                }
                if *length == 0 {
                    p.push(format!("{what}.length must be positive"));
                }
                if !(params.noise >= 0.0) {
                    p.push(format!("{what}.params.noise must be nonnegative"));
                }
            }
        }
        if self.protocol == Protocol::ZeroShot && d.target.is_none() {
            p.push("protocol zero_shot needs data.target".into());
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::config(format!("{} problem(s):\n  - {}", p.len(), p.join("\n  - "))))
        }
    }

    pub fn task_for(&self, dataset: &str) -> Task {
        self.loss.task.unwrap_or(match self.protocol {
            Protocol::ShortTerm => Task::ShortTermM4,
            _ => Task::for_dataset(dataset),
        })
    }

    pub fn train_settings(&self, dataset: &str) -> TrainSettings {
        let o = &self.optim;
        TrainSettings {
            weights: self.loss.weights,
            schedule: loss_schedule_for_task(self.task_for(dataset)),
            adam: AdamConfig {
                lr: o.lr,
                beta1: o.beta1,
                beta2: o.beta2,
                eps: o.eps,
            },
            batch_size: o.batch_size,
            max_epochs: o.max_epochs,
            patience: o.patience,
            seed: self.seed,
            threads: self.threads,
            detach_teacher: self.loss.detach_teacher,
            season: self.loss.season,
        }
    }

    /// Training dataset with splits (and the few-shot cut when the
    /// protocol asks for it).
    pub fn training_dataset(&self) -> Result<SeriesDataset> {
        let ds = data::make_splits(self.data.source.load(self.seed)?, &self.data.split)?;
        check_channels(&ds, self.model.channels)?;
        if self.protocol == Protocol::FewShot {
            data::fewshot_take(&ds, self.data.fewshot_fraction, self.data.fewshot_tail)
        } else {
            Ok(ds)
        }
    }

    /// Dataset scored by evaluation: the zero-shot target if configured,
    /// otherwise the (uncut) training dataset.
    pub fn evaluation_dataset(&self) -> Result<SeriesDataset> {
        let source = data::make_splits(self.data.source.load(self.seed)?, &self.data.split)?;
        match (&self.data.target, self.protocol) {
            (Some(t), Protocol::ZeroShot) => {
                let target = data::make_splits(t.load(self.seed)?, &self.data.split)?;
                Ok(data::zeroshot_pair(source, target)?.target)
            }
            _ => Ok(source),
        }
    }
}

fn check_channels(ds: &SeriesDataset, channels: usize) -> Result<()> {
    if ds.channels != channels {
        return Err(Error::config(format!(
            "dataset `{}` has {} channels but model.channels is {channels}",
            ds.name, ds.channels
        )));
    }
    Ok(())
}

/// The configuration of the desk-scale synthetic experiment.
pub fn desk_config() -> RunConfig {
    let mut c = RunConfig {
        seed: 7,
        output_dir: PathBuf::from("runs/desk"),
        ..RunConfig::default()
    };
    c.data.source = DataSource::Synthetic {
        generator: SynthKind::SineTrend,
        length: 2000,
        channels: 2,
        params: SynthParams {
            amplitude: 1.0,
            period: 24.0,
            trend: 0.0005,
            noise: 0.1,
            step_at: None,
        },
    };
    let m = &mut c.model;
    m.channels = 2;
    m.lookback = 96;
    m.horizon = 24;
    m.d_model = 64;
    m.instance_norm = true;
    m.input.dict_size = 32;
    m.student.layers = 4;
    m.student.heads = 4;
    m.student.d_ff = 256;
    m.teacher.capacity = crate::teacher::CapacitySchedule::new(vec![(24, 16), (48, 24), (96, 32)])
        .expect("valid schedule");
    c.optim.max_epochs = 50;
    c.optim.patience = 10;
    c
}
