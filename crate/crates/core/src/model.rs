//! The joint teacher/student model used for training and the
//! student-only model used for inference.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Entries, Entry};
use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::input_block::{build_dictionary, BranchInputs, InputBlock, InputConfig};
use crate::layers::linear;
use crate::numerics::params::ParamId;
use crate::numerics::{ParamStore, Real, Tape, Tensor, Var};
use crate::student::{merge, Student, StudentConfig, StudentOutput};
use crate::teacher::{Teacher, TeacherConfig, TeacherOutput};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    /// 1-based feature depths: depth `k` pairs `E_k` with `Z_k`.
    pub depths: Vec<usize>,
    pub omega: Vec<f64>,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            depths: vec![2, 3],
            omega: vec![1.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub channels: usize,
    pub lookback: usize,
    pub horizon: usize,
    pub d_model: usize,
    /// Subtract each window's per-channel input mean before the model and
    /// add it back to the predictions.
    pub instance_norm: bool,
    pub input: InputConfig,
    pub teacher: TeacherConfig,
    pub student: StudentConfig,
    pub guidance: GuidanceConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: 7,
            lookback: 96,
            horizon: 96,
            d_model: 768,
            instance_norm: false,
            input: InputConfig::default(),
            teacher: TeacherConfig::default(),
            student: StudentConfig::default(),
            guidance: GuidanceConfig::default(),
        }
    }
}

impl ModelConfig {
    /// Every violated constraint, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        let d = self.d_model;
        for (what, v) in [
            ("channels", self.channels),
            ("lookback", self.lookback),
            ("horizon", self.horizon),
            ("d_model", d),
        ] {
            if v == 0 {
                p.push(format!("model.{what} must be positive"));
            }
        }
        if d < 2 {
            p.push("model.d_model must be at least 2 for the spectral path".into());
        }
        if self.input.heads == 0 || d % self.input.heads != 0 {
            p.push(format!("model.input.heads {} must divide d_model {d}", self.input.heads));
        }
        if self.input.dict_size == 0 {
            p.push("model.input.dict_size must be positive".into());
        }
        if self.student.heads == 0 || d % self.student.heads != 0 {
            p.push(format!("model.student.heads {} must divide d_model {d}", self.student.heads));
        }
        if self.student.lora_rank == 0 || self.student.lora_rank > d {
            p.push(format!("model.student.lora_rank {} must be within 1..={d}", self.student.lora_rank));
        }
        let k = self.teacher.kernel;
        if k == 0 || k % 2 == 0 || k > d {
            p.push(format!("model.teacher.kernel {k} must be odd and within 1..={d}"));
        }
        let d_fft = d / 2 + 1;
        let cap = crate::teacher::select_capacity(self.horizon, &self.teacher.capacity);
        if cap > d_fft {
            p.push(format!(
                "capacity {cap} selected for horizon {} exceeds d_FFT {d_fft}; adjust model.teacher.capacity",
                self.horizon
            ));
        }
        let g = &self.guidance;
        if g.depths.len() != g.omega.len() {
            p.push("model.guidance.depths and model.guidance.omega differ in length".into());
        }
        if g.omega.iter().any(|&w| !(w >= 0.0)) {
            p.push("model.guidance.omega must be nonnegative".into());
        }
        for &k in &g.depths {
            if k == 0 || k > self.teacher.blocks + 1 || k > self.student.layers + 1 {
                p.push(format!(
                    "guidance depth {k} needs 1 <= k <= min(teacher blocks, student layers) + 1"
                ));
            }
        }
        p
    }
}

/// Projection pair for one guidance depth.
#[derive(Debug, Clone)]
pub struct GuidanceHead {
    pub depth: usize,
    pub omega: f64,
    pub psi_s: ParamId,
    pub psi_t: ParamId,
}

/// Everything the joint forward pass produces.
#[derive(Debug, Clone)]
pub struct JointOutput {
    pub inputs: BranchInputs,
    pub teacher: TeacherOutput,
    pub student: StudentOutput,
}

/// Teacher, student, input block and guidance heads in one registry.
#[derive(Debug, Clone)]
pub struct JointModel<F: Real> {
    pub config: ModelConfig,
    pub store: ParamStore<F>,
    pub input: InputBlock,
    pub teacher: Teacher,
    pub student: Student,
    pub guidance: Vec<GuidanceHead>,
}

fn check(cfg: &ModelConfig) -> Result<()> {
    let p = cfg.problems();
    if p.is_empty() {
        Ok(())
    } else {
        Err(Error::config(p.join("; ")))
    }
}

/// Subtract per-window channel means when instance normalization is on;
/// returns the shifted input and the offsets `[B, 1, C]`.
fn prepare_input<F: Real>(x: &Tensor<F>, instance_norm: bool) -> Result<(Tensor<F>, Option<Tensor<F>>)> {
    if x.rank() != 3 {
        return Err(Error::shape("model input [B, L, C]", x.shape(), &[0, 0, 0]));
    }
    if !instance_norm {
        return Ok((x.clone(), None));
    }
    let (b, l, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut mean = vec![F::zero(); b * c];
    for i in 0..b {
        for ch in 0..c {
            let s: F = (0..l).map(|t| x.data()[(i * l + t) * c + ch]).sum();
            mean[i * c + ch] = s / F::lit(l as f64);
        }
    }
    let mut shifted = x.clone();
    for (k, v) in shifted.data_mut().iter_mut().enumerate() {
        let (i, ch) = (k / (l * c), k % c);
        *v = *v - mean[i * c + ch];
    }
    Ok((shifted, Some(Tensor::new(vec![b, 1, c], mean)?)))
}

fn restore<F: Real>(tape: &mut Tape<'_, F>, pred: Var, offset: &Option<Tensor<F>>) -> Result<Var> {
    match offset {
        Some(o) => {
            let o = tape.constant(o.clone());
            tape.add(pred, o)
        }
        None => Ok(pred),
    }
}

fn check_input(cfg: &ModelConfig, x: &Tensor<impl Real>) -> Result<()> {
    let s = x.shape();
    if s.len() != 3 || s[1] != cfg.lookback || s[2] != cfg.channels {
        return Err(Error::shape(
            "model input",
            s,
            &[0, cfg.lookback, cfg.channels],
        ));
    }
    Ok(())
}

impl<F: Real> JointModel<F> {
    /// Fresh model. `dictionary` overrides the configured dictionary
    /// source when given.
    pub fn new(config: ModelConfig, seed: u64, dictionary: Option<Tensor<f64>>) -> Result<Self> {
        check(&config)?;
        let dict = match dictionary {
            Some(d) => d,
            None => build_dictionary(&config.input.dictionary, config.input.dict_size, config.d_model, seed)?,
        };
        let mut store = ParamStore::new();
        let c = &config;
        let input = InputBlock::register(&mut store, c.lookback, c.d_model, c.input.heads, &dict, seed)?;
        let teacher = Teacher::register(&mut store, &c.teacher, c.channels, c.d_model, c.horizon, seed)?;
        let student = Student::register(&mut store, &c.student, c.channels, c.d_model, c.horizon, seed, true)?;
        let mut guidance = Vec::new();
        for (&depth, &omega) in c.guidance.depths.iter().zip(&c.guidance.omega) {
            guidance.push(GuidanceHead {
                depth,
                omega,
                psi_s: store.add(format!("guide.{depth}.student"), Tensor::eye(c.d_model), true),
                psi_t: store.add(format!("guide.{depth}.teacher"), Tensor::eye(c.d_model), true),
            });
        }
        let mut model = JointModel {
            config,
            store,
            input,
            teacher,
            student,
            guidance,
        };
        if let Some(path) = model.config.student.backbone.clone() {
            model.load_backbone(&path)?;
        }
        Ok(model)
    }

    /// Replace the frozen student backbone with `student.blocks.*`
    /// tensors from a checkpoint (adapters are left alone).
    pub fn load_backbone(&mut self, path: &Path) -> Result<()> {
        let entries = Entries(checkpoint::load(path)?);
        let ids: Vec<_> = self
            .store
            .ids_with_prefix("student.blocks.")
            .into_iter()
            .filter(|&id| !self.store.get(id).name.contains(".lora_"))
            .collect();
        for id in ids {
            let name = self.store.get(id).name.clone();
            let t = entries.require(&name)?.to_tensor::<F>()?;
            self.store.set(id, t).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        }
        Ok(())
    }

    /// `x` is `[B, L, C]` in normalized units.
    pub fn forward<'s>(&'s self, tape: &mut Tape<'s, F>, x: &Tensor<F>) -> Result<JointOutput> {
        check_input(&self.config, x)?;
        let (xs, offset) = prepare_input(x, self.config.instance_norm)?;
        let xv = tape.constant(xs);
        let inputs = self.input.forward(tape, xv)?;
        let mut teacher = self.teacher.forward(tape, inputs.e1)?;
        let mut student = self.student.forward(tape, inputs.z1)?;
        teacher.pred = restore(tape, teacher.pred, &offset)?;
        student.pred = restore(tape, student.pred, &offset)?;
        Ok(JointOutput {
            inputs,
            teacher,
            student,
        })
    }

    /// Teacher branch input `E_1` for `x`.
    pub fn teacher_input(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        check_input(&self.config, x)?;
        let (xs, _) = prepare_input(x, self.config.instance_norm)?;
        let mut tape = Tape::with_params(&self.store);
        let xv = tape.constant(xs);
        let inputs = self.input.forward(&mut tape, xv)?;
        Ok(tape.value(inputs.e1).clone())
    }

    /// Projected `(student, teacher)` feature pairs for every guidance
    /// depth.
    pub fn guidance_pairs(&self, tape: &mut Tape<'_, F>, out: &JointOutput) -> Result<Vec<(Var, Var, f64)>> {
        self.guidance
            .iter()
            .map(|h| {
                let z = *out.student.features.get(h.depth - 1).ok_or_else(|| {
                    Error::config(format!("student has no features at depth {}", h.depth))
                })?;
                let e = *out.teacher.features.get(h.depth - 1).ok_or_else(|| {
                    Error::config(format!("teacher has no features at depth {}", h.depth))
                })?;
                let ps = linear(tape, z, h.psi_s, None)?;
                let pt = linear(tape, e, h.psi_t, None)?;
                Ok((ps, pt, h.omega))
            })
            .collect()
    }

    /// Student-branch prediction only, `[B, T, C]`.
    pub fn predict_student(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let mut tape = Tape::with_params(&self.store);
        let out = self.forward(&mut tape, x)?;
        Ok(tape.value(out.student.pred).clone())
    }

    pub fn predict_teacher(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let mut tape = Tape::with_params(&self.store);
        let out = self.forward(&mut tape, x)?;
        Ok(tape.value(out.teacher.pred).clone())
    }

    pub fn config_entry(&self) -> Result<Entry> {
        Ok(Entry::bytes("meta.config", serde_json::to_string(&self.config)?.as_bytes()))
    }

    /// Rebuild from checkpoint entries written by [`JointModel::entries`].
    pub fn from_entries(entries: &Entries) -> Result<Self> {
        let config: ModelConfig = serde_json::from_str(&entries.text("meta.config")?)?;
        let placeholder = Tensor::zeros(&[config.input.dict_size, config.d_model]);
        let mut cfg = config.clone();
        cfg.student.backbone = None;
        let mut model = JointModel::new(cfg, 0, Some(placeholder))?;
        model.config = config;
        entries.fill_store(&mut model.store, "")?;
        Ok(model)
    }

    /// Config plus every parameter.
    pub fn entries(&self) -> Result<Vec<Entry>> {
        let mut v = vec![Entry::bytes("meta.kind", b"joint"), self.config_entry()?];
        v.extend(checkpoint::store_entries(&self.store, ""));
        Ok(v)
    }

    /// Student-only model sharing the trained input block and student
    /// weights; the teacher and guidance heads are dropped. With `merge`
    /// the adapters are folded into the frozen projections.
    pub fn export_student(&self, norm: Option<NormStats>, merge_lora: bool) -> Result<StudentModel<F>> {
        let mut sm = StudentModel::empty(&self.config, merge_lora)?;
        let ids: Vec<_> = sm.store.ids().collect();
        for id in ids {
            let name = sm.store.get(id).name.clone();
            let src = self
                .store
                .find(&name)
                .ok_or_else(|| Error::Checkpoint(format!("joint model lacks {name}")))?;
            sm.store.set(id, self.store.value(src).clone())?;
        }
        if merge_lora {
            let s = F::lit(self.config.student.scaling());
            for (jb, sb) in self.student.blocks.iter().zip(&sm.student.blocks) {
                for (lora, w_joint, w_student) in [(jb.lora_q, jb.w_q, sb.w_q), (jb.lora_v, jb.w_v, sb.w_v)] {
                    let l = lora.expect("joint model always carries adapters");
                    let merged = merge(
                        self.store.value(w_joint),
                        self.store.value(l.a),
                        self.store.value(l.b),
                        s,
                    )?;
                    sm.store.set(w_student, merged)?;
                }
            }
        }
        sm.norm = norm;
        Ok(sm)
    }

    /// Number of scalar parameters whose name starts with `prefix`.
    pub fn count(&self, prefix: &str) -> usize {
        self.store.count_elements(|p| p.name.starts_with(prefix))
    }
}

/// Inference-time model: input block, student and normalization
/// statistics.
#[derive(Debug, Clone)]
pub struct StudentModel<F: Real> {
    pub config: ModelConfig,
    pub store: ParamStore<F>,
    pub input: InputBlock,
    pub student: Student,
    pub merged: bool,
    pub norm: Option<NormStats>,
}

impl<F: Real> StudentModel<F> {
    fn empty(config: &ModelConfig, merged: bool) -> Result<Self> {
        check(config)?;
        let c = config;
        let mut store = ParamStore::new();
        let dict = Tensor::zeros(&[c.input.dict_size, c.d_model]);
        let input = InputBlock::register(&mut store, c.lookback, c.d_model, c.input.heads, &dict, 0)?;
        let student = Student::register(&mut store, &c.student, c.channels, c.d_model, c.horizon, 0, !merged)?;
        Ok(StudentModel {
            config: config.clone(),
            store,
            input,
            student,
            merged,
            norm: None,
        })
    }

    /// `x` is `[B, L, C]` in normalized units; returns `[B, T, C]`.
    pub fn forward<'s>(&'s self, tape: &mut Tape<'s, F>, x: &Tensor<F>) -> Result<StudentOutput> {
        check_input(&self.config, x)?;
        let (xs, offset) = prepare_input(x, self.config.instance_norm)?;
        let xv = tape.constant(xs);
        let inputs = self.input.forward(tape, xv)?;
        let mut out = self.student.forward(tape, inputs.z1)?;
        out.pred = restore(tape, out.pred, &offset)?;
        Ok(out)
    }

    pub fn predict(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let mut tape = Tape::with_params(&self.store);
        let out = self.forward(&mut tape, x)?;
        Ok(tape.value(out.pred).clone())
    }

    pub fn entries(&self) -> Result<Vec<Entry>> {
        let mut v = vec![
            Entry::bytes("meta.kind", b"student"),
            Entry::bytes("meta.config", serde_json::to_string(&self.config)?.as_bytes()),
            Entry::bytes("meta.merged", &[self.merged as u8]),
        ];
        v.extend(checkpoint::store_entries(&self.store, ""));
        if let Some(n) = &self.norm {
            v.push(Entry::f64s("norm.mean", &n.mean));
            v.push(Entry::f64s("norm.std", &n.std));
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.entries()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let entries = Entries(checkpoint::load(path)?);
        if entries.text("meta.kind")? != "student" {
            return Err(Error::Checkpoint(format!("{} is not a student artifact", path.display())));
        }
        let config: ModelConfig = serde_json::from_str(&entries.text("meta.config")?)?;
        let merged = entries.flag("meta.merged");
        let mut sm = StudentModel::empty(&config, merged)?;
        entries.fill_store(&mut sm.store, "")?;
        if let (Some(m), Some(s)) = (entries.get("norm.mean"), entries.get("norm.std")) {
            sm.norm = Some(NormStats {
                mean: m.to_tensor::<f64>()?.into_data(),
                std: s.to_tensor::<f64>()?.into_data(),
            });
        }
        Ok(sm)
    }
}
