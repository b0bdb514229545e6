//! Trend-periodic fusion gate.

use rand::Rng;

use crate::error::Result;
use crate::layers::Mlp;
use crate::numerics::params::ParamStore;
use crate::numerics::{Real, Tape, Tensor, Var};

#[derive(Debug, Clone)]
pub struct Gate {
    /// `(C + 1) -> d_gate -> C`.
    pub mlp: Mlp,
}

#[derive(Debug, Clone, Copy)]
pub struct GateOutput {
    pub out: Var,
    /// Per-channel gate values in `(0, 1)`, `[.., C]`.
    pub gate: Var,
}

impl Gate {
    pub fn register<F: Real>(
        store: &mut ParamStore<F>,
        prefix: &str,
        channels: usize,
        d_gate: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Gate {
            mlp: Mlp::register(store, prefix, (channels + 1, d_gate, channels), true, rng),
        }
    }

    /// `h` and `f` are `[.., C, d]`; `horizon` is the normalized forecast
    /// length appended to the pooled trend representation.
    pub fn forward<F: Real>(&self, tape: &mut Tape<'_, F>, h: Var, f: Var, horizon: f64) -> Result<GateOutput> {
        let pooled = tape.mean_last(h); // [.., C]
        let shape = tape.shape(h).to_vec();
        let mut lead = shape[..shape.len() - 2].to_vec();
        lead.push(1);
        let t = tape.constant(Tensor::full(&lead, F::lit(horizon)));
        let g_in = tape.concat_last(&[pooled, t])?;
        let logits = self.mlp.forward(tape, g_in)?;
        let gate = tape.sigmoid(logits);
        let out = convex_combine(tape, gate, h, f)?;
        Ok(GateOutput { out, gate })
    }
}

/// `g * f + (1 - g) * h` with `g` of shape `[.., C]` broadcast over the
/// feature axis.
pub fn convex_combine<F: Real>(tape: &mut Tape<'_, F>, g: Var, h: Var, f: Var) -> Result<Var> {
    let mut gs = tape.shape(g).to_vec();
    gs.push(1);
    let g = tape.reshape(g, &gs)?;
    let neg = tape.scale(g, -F::one());
    let one_minus = tape.offset(neg, F::one());
    let a = tape.mul(g, f)?;
    let b = tape.mul(one_minus, h)?;
    tape.add(a, b)
}
