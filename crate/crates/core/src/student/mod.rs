//! Transformer student: frozen pre-norm blocks with low-rank adapters on
//! the query and value projections, plus a decoder.

pub mod lora;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{decode, mha, Mlp};
use crate::numerics::params::{normal, uniform, ParamId, ParamStore};
use crate::numerics::rng::{rng_for, rng_for_indexed, stream};
use crate::numerics::{Real, Tape, Tensor, Var};

pub use lora::{lora_linear, merge, Lora};

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudentConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    pub causal: bool,
    pub positional: bool,
    pub decoder_hidden: Option<usize>,
    /// Checkpoint whose `student.blocks.*` tensors replace the random
    /// backbone.
    pub backbone: Option<PathBuf>,
}

impl Default for StudentConfig {
    fn default() -> Self {
        StudentConfig {
            layers: 6,
            heads: 12,
            d_ff: 3072,
            lora_rank: 8,
            lora_alpha: 16.0,
            causal: false,
            positional: false,
            decoder_hidden: None,
            backbone: None,
        }
    }
}

impl StudentConfig {
    pub fn scaling(&self) -> f64 {
        self.lora_alpha / self.lora_rank as f64
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    fn forward<F: Real>(&self, tape: &mut Tape<'_, F>, x: Var) -> Result<Var> {
        let n = tape.normalize(x, F::lit(LN_EPS));
        let g = tape.param(self.gain);
        let b = tape.param(self.bias);
        let y = tape.mul(n, g)?;
        tape.add(y, b)
    }
}

/// Handles of one transformer block. `lora_q`/`lora_v` are absent in a
/// merged export.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub w_q: ParamId,
    pub b_q: ParamId,
    pub w_k: ParamId,
    pub b_k: ParamId,
    pub w_v: ParamId,
    pub b_v: ParamId,
    pub w_o: ParamId,
    pub b_o: ParamId,
    pub ln2: LayerNorm,
    pub w_1: ParamId,
    pub b_1: ParamId,
    pub w_2: ParamId,
    pub b_2: ParamId,
    pub lora_q: Option<Lora>,
    pub lora_v: Option<Lora>,
}

#[derive(Debug, Clone)]
pub struct StudentOutput {
    /// `[B, T, C]`.
    pub pred: Var,
    /// `Z_1 .. Z_{N+1}`.
    pub features: Vec<Var>,
    /// Per-layer attention weights `[B, heads, C, C]`.
    pub attention: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct Student {
    pub blocks: Vec<TransformerBlock>,
    pub decoder: Mlp,
    pub positional: Option<ParamId>,
    pub heads: usize,
    pub scaling: f64,
    pub causal: bool,
}

impl Student {
    /// Register the student. With `with_adapters = false` no adapter
    /// tensors are created (merged export layout).
    #[allow(clippy::too_many_arguments)]
    pub fn register<F: Real>(
        store: &mut ParamStore<F>,
        cfg: &StudentConfig,
        channels: usize,
        d_model: usize,
        horizon: usize,
        seed: u64,
        with_adapters: bool,
    ) -> Result<Self> {
        if cfg.heads == 0 || d_model % cfg.heads != 0 {
            return Err(Error::config(format!(
                "d_model {d_model} is not divisible by {} student heads",
                cfg.heads
            )));
        }
        if cfg.lora_rank == 0 || cfg.lora_rank > d_model {
            return Err(Error::config(format!(
                "LoRA rank {} must be within 1..={d_model}",
                cfg.lora_rank
            )));
        }
        let d = d_model;
        let proj_std = INIT_STD / (2.0 * cfg.layers.max(1) as f64).sqrt();
        let mut blocks = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let p = format!("student.blocks.{l}");
            let mut rng = rng_for_indexed(seed, stream::STUDENT_BACKBONE, l as u64);
            let frozen = |store: &mut ParamStore<F>, name: &str, t: Tensor<F>| {
                store.add(format!("{p}.{name}"), t, false)
            };
            let ln1 = LayerNorm {
                gain: frozen(store, "ln1.gain", Tensor::full(&[d], F::one())),
                bias: frozen(store, "ln1.bias", Tensor::zeros(&[d])),
            };
            let w_q = frozen(store, "attn.w_q", normal(&mut rng, &[d, d], INIT_STD));
            let b_q = frozen(store, "attn.b_q", Tensor::zeros(&[d]));
            let w_k = frozen(store, "attn.w_k", normal(&mut rng, &[d, d], INIT_STD));
            let b_k = frozen(store, "attn.b_k", Tensor::zeros(&[d]));
            let w_v = frozen(store, "attn.w_v", normal(&mut rng, &[d, d], INIT_STD));
            let b_v = frozen(store, "attn.b_v", Tensor::zeros(&[d]));
            let w_o = frozen(store, "attn.w_o", normal(&mut rng, &[d, d], proj_std));
            let b_o = frozen(store, "attn.b_o", Tensor::zeros(&[d]));
            let ln2 = LayerNorm {
                gain: frozen(store, "ln2.gain", Tensor::full(&[d], F::one())),
                bias: frozen(store, "ln2.bias", Tensor::zeros(&[d])),
            };
            let w_1 = frozen(store, "mlp.w_1", normal(&mut rng, &[d, cfg.d_ff], INIT_STD));
            let b_1 = frozen(store, "mlp.b_1", Tensor::zeros(&[cfg.d_ff]));
            let w_2 = frozen(store, "mlp.w_2", normal(&mut rng, &[cfg.d_ff, d], proj_std));
            let b_2 = frozen(store, "mlp.b_2", Tensor::zeros(&[d]));
            let (lora_q, lora_v) = if with_adapters {
                let mut arng = rng_for_indexed(seed, stream::STUDENT_ADAPTERS, l as u64);
                let bound = 1.0 / (d as f64).sqrt();
                let r = cfg.lora_rank;
                let mut pair = |store: &mut ParamStore<F>, which: &str| Lora {
                    a: store.add(format!("{p}.attn.lora_{which}.a"), uniform(&mut arng, &[d, r], bound), true),
                    b: store.add(format!("{p}.attn.lora_{which}.b"), Tensor::zeros(&[r, d]), true),
                };
                (Some(pair(store, "q")), Some(pair(store, "v")))
            } else {
                (None, None)
            };
            blocks.push(TransformerBlock {
                ln1,
                w_q,
                b_q,
                w_k,
                b_k,
                w_v,
                b_v,
                w_o,
                b_o,
                ln2,
                w_1,
                b_1,
                w_2,
                b_2,
                lora_q,
                lora_v,
            });
        }
        let positional = cfg.positional.then(|| {
            let mut rng = rng_for(seed, stream::STUDENT_BACKBONE);
            store.add("student.wpe", normal(&mut rng, &[channels, d], 0.01), false)
        });
        let hidden = cfg.decoder_hidden.unwrap_or(d_model);
        let mut drng = rng_for_indexed(seed, stream::DECODERS, 1);
        let decoder = Mlp::register(store, "student.decoder", (d_model, hidden, horizon), true, &mut drng);
        Ok(Student {
            blocks,
            decoder,
            positional,
            heads: cfg.heads,
            scaling: cfg.scaling(),
            causal: cfg.causal,
        })
    }

    fn adapter<F: Real>(tape: &mut Tape<'_, F>, l: Option<Lora>) -> Option<(Var, Var)> {
        l.map(|l| (tape.param(l.a), tape.param(l.b)))
    }

    /// One pre-norm block; returns the new residual stream and the
    /// attention weights.
    pub fn block_forward<F: Real>(&self, tape: &mut Tape<'_, F>, b: &TransformerBlock, z: Var) -> Result<(Var, Var)> {
        let d = *tape.shape(z).last().expect("rank >= 1");
        let s = F::lit(self.scaling);
        let h = b.ln1.forward(tape, z)?;
        let (wq, bq) = (tape.param(b.w_q), tape.param(b.b_q));
        let (wk, bk) = (tape.param(b.w_k), tape.param(b.b_k));
        let (wv, bv) = (tape.param(b.w_v), tape.param(b.b_v));
        let aq = Self::adapter(tape, b.lora_q);
        let av = Self::adapter(tape, b.lora_v);
        let q = lora_linear(tape, h, wq, Some(bq), aq, s)?;
        let k = lora_linear(tape, h, wk, Some(bk), None, s)?;
        let v = lora_linear(tape, h, wv, Some(bv), av, s)?;
        let scale = F::one() / F::lit((d / self.heads) as f64).sqrt();
        let att = mha(tape, q, k, v, self.heads, scale, self.causal)?;
        let (wo, bo) = (tape.param(b.w_o), tape.param(b.b_o));
        let o = lora_linear(tape, att.out, wo, Some(bo), None, s)?;
        let z = tape.add(z, o)?;

        let h = b.ln2.forward(tape, z)?;
        let (w1, b1) = (tape.param(b.w_1), tape.param(b.b_1));
        let f = lora_linear(tape, h, w1, Some(b1), None, s)?;
        let f = tape.gelu(f);
        let (w2, b2) = (tape.param(b.w_2), tape.param(b.b_2));
        let f = lora_linear(tape, f, w2, Some(b2), None, s)?;
        let z = tape.add(z, f)?;
        Ok((z, att.weights))
    }

    /// `z1` is `[B, C, d]`; the prediction is `[B, T, C]`.
    pub fn forward<F: Real>(&self, tape: &mut Tape<'_, F>, z1: Var) -> Result<StudentOutput> {
        let mut z = z1;
        if let Some(p) = self.positional {
            let p = tape.param(p);
            z = tape.add(z, p)?;
        }
        let mut features = vec![z1];
        let mut attention = Vec::with_capacity(self.blocks.len());
        for (i, b) in self.blocks.iter().enumerate() {
            let (next, w) = self.block_forward(tape, b, z)?;
            z = tape.label(next, format!("student Z{}", i + 2));
            features.push(z);
            attention.push(w);
        }
        let pred = decode(tape, &self.decoder, z)?;
        let pred = tape.label(pred, "student prediction");
        Ok(StudentOutput {
            pred,
            features,
            attention,
        })
    }

    /// Number of adapter and decoder scalars, the only trainable student
    /// entries.
    pub fn expected_trainable<F: Real>(&self, store: &ParamStore<F>) -> usize {
        let adapters: usize = self
            .blocks
            .iter()
            .flat_map(|b| [b.lora_q, b.lora_v])
            .flatten()
            .map(|l| store.value(l.a).numel() + store.value(l.b).numel())
            .sum();
        let dec = &self.decoder;
        adapters
            + [dec.w1, dec.b1, dec.w2, dec.b2]
                .iter()
                .map(|&id| store.value(id).numel())
                .sum::<usize>()
    }
}
