//! Temporal-spectral teacher: stacked Temp-Spec blocks and a decoder.

pub mod decompose;
pub mod gate;
pub mod pooling;
pub mod spectral;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{decode, linear, Mlp};
use crate::numerics::params::{ParamId, ParamStore};
use crate::numerics::rng::{rng_for, rng_for_indexed, stream};
use crate::numerics::{MaskGradient, Real, SpectrumVar, Tape, Tensor, Var};

pub use decompose::{decompose, decompose_taped, moving_average_matrix};
pub use gate::{convex_combine, Gate};
pub use pooling::{pool, Pooling};
pub use spectral::{
    adaptive_spectral, adaptive_spectral_tensor, dsp, select_capacity, spectrum_width, AsbVars,
    CapacitySchedule, ThresholdShape,
};

/// How a complex bin is reduced to the real response fed to pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumReduction {
    #[default]
    Magnitude,
    RealPart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherConfig {
    pub blocks: usize,
    pub kernel: usize,
    pub capacity: CapacitySchedule,
    pub d_pool: usize,
    pub d_gate: usize,
    /// Decoder hidden width; the model width when absent.
    pub decoder_hidden: Option<usize>,
    pub threshold: ThresholdShape,
    pub reduction: SpectrumReduction,
    pub mask_gradient: MaskGradient,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            blocks: 2,
            kernel: 25,
            capacity: CapacitySchedule::default(),
            d_pool: 64,
            d_gate: 64,
            decoder_hidden: None,
            threshold: ThresholdShape::Scalar,
            reduction: SpectrumReduction::Magnitude,
            mask_gradient: MaskGradient::default(),
        }
    }
}

/// Parameter handles of one Temp-Spec block.
#[derive(Debug, Clone)]
pub struct TempSpecBlock {
    pub w_trend: ParamId,
    pub w_season: ParamId,
    pub gamma_g: (ParamId, ParamId),
    pub gamma_l: (ParamId, ParamId),
    pub theta: ParamId,
    pub w_spec: ParamId,
    pub pool: Pooling,
    pub gate: Gate,
}

/// Intermediate values of one block, kept for losses and analysis.
#[derive(Debug, Clone, Copy)]
pub struct BlockTrace {
    pub out: Var,
    pub h_tilde: Var,
    pub f_tilde: Var,
    pub gate: Var,
    pub pool_weights: Var,
    pub power: Var,
    pub mask: Var,
}

#[derive(Debug, Clone)]
pub struct TeacherOutput {
    /// `[B, T, C]`.
    pub pred: Var,
    /// `E_1 .. E_{N+1}`.
    pub features: Vec<Var>,
    pub blocks: Vec<BlockTrace>,
}

#[derive(Debug, Clone)]
pub struct Teacher {
    pub blocks: Vec<TempSpecBlock>,
    pub decoder: Mlp,
    pub kernel: usize,
    pub d_red: usize,
    /// Horizon divided by the largest scheduled horizon.
    pub horizon_norm: f64,
    pub reduction: SpectrumReduction,
    pub mask_gradient: MaskGradient,
    pub threshold: ThresholdShape,
}

impl Teacher {
    pub fn register<F: Real>(
        store: &mut ParamStore<F>,
        cfg: &TeacherConfig,
        channels: usize,
        d_model: usize,
        horizon: usize,
        seed: u64,
    ) -> Result<Self> {
        let d_fft = spectrum_width(d_model);
        let d_red = select_capacity(horizon, &cfg.capacity);
        if d_red > d_fft {
            return Err(Error::config(format!(
                "capacity {d_red} selected for horizon {horizon} exceeds d_FFT = {d_fft} at d_model {d_model}"
            )));
        }
        if cfg.kernel == 0 || cfg.kernel % 2 == 0 || cfg.kernel > d_model {
            return Err(Error::config(format!(
                "moving-average kernel {} must be odd and within 1..={d_model}",
                cfg.kernel
            )));
        }
        let mut rng = rng_for(seed, stream::TEACHER);
        let mut blocks = Vec::with_capacity(cfg.blocks);
        for b in 0..cfg.blocks {
            let p = format!("teacher.blocks.{b}");
            let mut selector = Tensor::<F>::zeros(&[d_fft, d_red]);
            for j in 0..d_red {
                selector.data_mut()[j * d_red + j] = F::one();
            }
            blocks.push(TempSpecBlock {
                w_trend: store.add(format!("{p}.w_trend"), Tensor::eye(d_model), true),
                w_season: store.add(format!("{p}.w_season"), Tensor::eye(d_model), true),
                gamma_g: (
                    store.add(format!("{p}.asb.gamma_g.re"), Tensor::full(&[channels, d_fft], F::one()), true),
                    store.add(format!("{p}.asb.gamma_g.im"), Tensor::zeros(&[channels, d_fft]), true),
                ),
                gamma_l: (
                    store.add(format!("{p}.asb.gamma_l.re"), Tensor::zeros(&[channels, d_fft]), true),
                    store.add(format!("{p}.asb.gamma_l.im"), Tensor::zeros(&[channels, d_fft]), true),
                ),
                theta: store.add(
                    format!("{p}.asb.theta"),
                    Tensor::zeros(&cfg.threshold.shape(channels, d_fft)),
                    true,
                ),
                w_spec: store.add(format!("{p}.dsp.w_spec"), selector, true),
                pool: Pooling::register(store, &format!("{p}.pool"), d_model, cfg.d_pool, &mut rng),
                gate: Gate::register(store, &format!("{p}.gate"), channels, cfg.d_gate, &mut rng),
            });
        }
        let hidden = cfg.decoder_hidden.unwrap_or(d_model);
        let mut drng = rng_for_indexed(seed, stream::DECODERS, 0);
        let decoder = Mlp::register(store, "teacher.decoder", (d_model, hidden, horizon), true, &mut drng);
        Ok(Teacher {
            blocks,
            decoder,
            kernel: cfg.kernel,
            d_red,
            horizon_norm: horizon as f64 / cfg.capacity.max_horizon() as f64,
            reduction: cfg.reduction,
            mask_gradient: cfg.mask_gradient,
            threshold: cfg.threshold,
        })
    }

    fn asb_vars<F: Real>(&self, tape: &mut Tape<'_, F>, b: &TempSpecBlock) -> AsbVars {
        AsbVars {
            gamma_g: SpectrumVar {
                re: tape.param(b.gamma_g.0),
                im: tape.param(b.gamma_g.1),
            },
            gamma_l: SpectrumVar {
                re: tape.param(b.gamma_l.0),
                im: tape.param(b.gamma_l.1),
            },
            theta: tape.param(b.theta),
        }
    }

    /// One Temp-Spec block applied to `e` (`[.., C, d]`).
    pub fn block_forward<F: Real>(&self, tape: &mut Tape<'_, F>, b: &TempSpecBlock, e: Var) -> Result<BlockTrace> {
        let (trend, season) = decompose_taped(tape, e, self.kernel)?;
        let ht = linear(tape, trend, b.w_trend, None)?;
        let hs = linear(tape, season, b.w_season, None)?;
        let h_tilde = tape.add(ht, hs)?;

        let vars = self.asb_vars(tape, b);
        let asb = adaptive_spectral(tape, e, &vars, self.mask_gradient)?;
        let w_spec = tape.param(b.w_spec);
        let reduced = dsp(tape, asb.spectrum, w_spec)?;
        let response = match self.reduction {
            SpectrumReduction::Magnitude => tape.magnitude(reduced.re, reduced.im)?,
            SpectrumReduction::RealPart => reduced.re,
        };
        let pooled = b.pool.forward(tape, response)?;
        let fused = b.gate.forward(tape, h_tilde, pooled.out, self.horizon_norm)?;
        Ok(BlockTrace {
            out: fused.out,
            h_tilde,
            f_tilde: pooled.out,
            gate: fused.gate,
            pool_weights: pooled.weights,
            power: asb.power,
            mask: asb.mask,
        })
    }

    /// `e1` is `[B, C, d]`; the prediction is `[B, T, C]`.
    pub fn forward<F: Real>(&self, tape: &mut Tape<'_, F>, e1: Var) -> Result<TeacherOutput> {
        let mut features = vec![e1];
        let mut traces = Vec::with_capacity(self.blocks.len());
        let mut e = e1;
        for (i, b) in self.blocks.iter().enumerate() {
            let t = self.block_forward(tape, b, e)?;
            e = tape.label(t.out, format!("teacher E{}", i + 2));
            features.push(e);
            traces.push(t);
        }
        let pred = decode(tape, &self.decoder, e)?;
        let pred = tape.label(pred, "teacher prediction");
        Ok(TeacherOutput {
            pred,
            features,
            blocks: traces,
        })
    }

    /// Set every block's threshold to the median power of that block's
    /// input spectrum on `e1` (`[B, C, d]`), block by block.
    pub fn calibrate_thresholds<F: Real>(&self, store: &mut ParamStore<F>, e1: &Tensor<F>) -> Result<()> {
        for i in 0..self.blocks.len() {
            let (power, shape) = {
                let mut tape = Tape::with_params(store);
                let mut e = tape.constant(e1.clone());
                for b in &self.blocks[..i] {
                    e = self.block_forward(&mut tape, b, e)?.out;
                }
                let f = tape.rfft(e)?;
                let rr = tape.mul(f.re, f.re)?;
                let ii = tape.mul(f.im, f.im)?;
                let p = tape.add(rr, ii)?;
                (tape.value(p).to_f64_vec(), tape.shape(p).to_vec())
            };
            let theta_id = self.blocks[i].theta;
            let target_shape = store.value(theta_id).shape().to_vec();
            let r = shape.len();
            let (c, d_fft) = (shape[r - 2], shape[r - 1]);
            let values: Vec<f64> = match self.threshold {
                ThresholdShape::Scalar => vec![spectral::median(&mut power.clone())],
                ThresholdShape::PerChannel => (0..c)
                    .map(|ch| {
                        let mut v: Vec<f64> = power
                            .chunks(d_fft)
                            .enumerate()
                            .filter(|(row, _)| row % c == ch)
                            .flat_map(|(_, r)| r.iter().copied())
                            .collect();
                        spectral::median(&mut v)
                    })
                    .collect(),
                ThresholdShape::PerFrequency => (0..d_fft)
                    .map(|k| {
                        let mut v: Vec<f64> = power.chunks(d_fft).map(|r| r[k]).collect();
                        spectral::median(&mut v)
                    })
                    .collect(),
            };
            store.set(theta_id, Tensor::from_f64(&target_shape, &values)?)?;
        }
        Ok(())
    }
}
