//! Attention pooling over reduced frequency bins.

use rand::Rng;

use crate::error::Result;
use crate::layers::Mlp;
use crate::numerics::params::{glorot, ParamId, ParamStore};
use crate::numerics::{Real, Tape, Var};

#[derive(Debug, Clone)]
pub struct Pooling {
    /// `1 x d_model` lift shared by every bin.
    pub w_f: ParamId,
    /// `d_model -> d_pool -> 1` scorer.
    pub mlp: Mlp,
}

#[derive(Debug, Clone, Copy)]
pub struct PoolOutput {
    /// `[.., C, d_model]`.
    pub out: Var,
    /// Softmax weights over bins, `[.., C, d_red]`.
    pub weights: Var,
}

impl Pooling {
    pub fn register<F: Real>(
        store: &mut ParamStore<F>,
        prefix: &str,
        d_model: usize,
        d_pool: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let w_f = store.add(format!("{prefix}.w_f"), glorot(rng, 1, d_model), true);
        let mlp = Mlp::register(store, &format!("{prefix}.score"), (d_model, d_pool, 1), true, rng);
        Pooling { w_f, mlp }
    }

    /// `s` holds one real response per bin, `[.., C, d_red]`.
    pub fn forward<F: Real>(&self, tape: &mut Tape<'_, F>, s: Var) -> Result<PoolOutput> {
        let w_f = tape.param(self.w_f);
        pool(tape, s, w_f, |tape, z| self.mlp.forward(tape, z))
    }
}

/// Lift every bin with `w_f`, score the lifted tokens, softmax over bins
/// and return the weighted sum.
pub fn pool<'s, F: Real>(
    tape: &mut Tape<'s, F>,
    s: Var,
    w_f: Var,
    score: impl FnOnce(&mut Tape<'s, F>, Var) -> Result<Var>,
) -> Result<PoolOutput> {
    let shape = tape.shape(s).to_vec();
    let r = shape.len();
    let bins = shape[r - 1];
    let d = tape.shape(w_f)[1];

    let mut col = shape.clone();
    col.push(1);
    let s = tape.reshape(s, &col)?;
    let z = tape.matmul(s, w_f)?; // [.., C, d_red, d]
    let scores = score(tape, z)?; // [.., C, d_red, 1]
    let scores = tape.reshape(scores, &shape)?;
    let weights = tape.softmax(scores)?;

    let mut row = shape[..r - 1].to_vec();
    row.extend([1, bins]);
    let w = tape.reshape(weights, &row)?;
    let pooled = tape.matmul(w, z)?; // [.., C, 1, d]
    let mut out_shape = shape[..r - 1].to_vec();
    out_shape.push(d);
    let out = tape.reshape(pooled, &out_shape)?;
    Ok(PoolOutput { out, weights })
}
