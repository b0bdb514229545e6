//! Small taped building blocks shared by the branches.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::params::{glorot, ParamId, ParamStore};
use crate::numerics::{Real, Tape, Tensor, Var};

/// Score added to masked attention logits.
const MASKED: f64 = -1e30;

/// Output of [`mha`]: the concatenated heads and the attention weights
/// shaped `[.., heads, queries, keys]`.
#[derive(Debug, Clone, Copy)]
pub struct Attention {
    pub out: Var,
    pub weights: Var,
}

/// Scaled dot-product attention over the last two axes.
///
/// `q` is `[.., n, d]`; `k` and `v` are `[.., m, d]` where their leading
/// axes are a suffix of the query's (so a shared key set broadcasts over a
/// batch). Every head uses the same `scale`.
pub fn mha<F: Real>(
    tape: &mut Tape<'_, F>,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    scale: F,
    causal: bool,
) -> Result<Attention> {
    let qs = tape.shape(q).to_vec();
    let ks = tape.shape(k).to_vec();
    if tape.shape(v) != ks.as_slice() {
        return Err(Error::shape("attention keys/values", &ks, tape.shape(v)));
    }
    let d = *qs.last().expect("rank >= 1");
    if qs.len() < 2 || ks.len() < 2 || *ks.last().expect("rank >= 1") != d {
        return Err(Error::shape("attention", &qs, &ks));
    }
    if heads == 0 || d % heads != 0 {
        return Err(Error::config(format!(
            "model width {d} is not divisible by {heads} heads"
        )));
    }
    let dh = d / heads;
    let n = qs[qs.len() - 2];
    let m = ks[ks.len() - 2];

    let qh = split_heads(tape, q, heads, dh)?; // [.., h, n, dh]
    let kh = split_heads(tape, k, heads, dh)?; // [.., h, m, dh]
    let vh = split_heads(tape, v, heads, dh)?;
    let kt = tape.transpose(kh)?;
    let raw = tape.matmul(qh, kt)?;
    let mut scores = tape.scale(raw, scale);
    if causal {
        if n != m {
            return Err(Error::config("causal attention needs as many keys as queries"));
        }
        let mut mask = Tensor::zeros(&[n, m]);
        for i in 0..n {
            for j in i + 1..m {
                mask.data_mut()[i * m + j] = F::lit(MASKED);
            }
        }
        let mask = tape.constant(mask);
        scores = tape.add(scores, mask)?;
    }
    let weights = tape.softmax(scores)?;
    let ctx = tape.matmul(weights, vh)?; // [.., h, n, dh]
    let out = merge_heads(tape, ctx)?;
    Ok(Attention { out, weights })
}

/// `[.., n, h*dh]` -> `[.., h, n, dh]`.
fn split_heads<F: Real>(tape: &mut Tape<'_, F>, x: Var, heads: usize, dh: usize) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    let r = s.len();
    let mut shape = s[..r - 1].to_vec();
    shape.extend([heads, dh]);
    let x = tape.reshape(x, &shape)?;
    let mut axes: Vec<usize> = (0..r - 2).collect();
    axes.extend([r - 1, r - 2, r]);
    tape.permute(x, &axes)
}

/// `[.., h, n, dh]` -> `[.., n, h*dh]`.
fn merge_heads<F: Real>(tape: &mut Tape<'_, F>, x: Var) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    let r = s.len();
    let mut axes: Vec<usize> = (0..r - 3).collect();
    axes.extend([r - 2, r - 3, r - 1]);
    let x = tape.permute(x, &axes)?;
    let mut shape = s[..r - 3].to_vec();
    shape.extend([s[r - 2], s[r - 3] * s[r - 1]]);
    tape.reshape(x, &shape)
}

/// `x @ w (+ b)`.
pub fn linear<F: Real>(tape: &mut Tape<'_, F>, x: Var, w: ParamId, b: Option<ParamId>) -> Result<Var> {
    let w = tape.param(w);
    let y = tape.matmul(x, w)?;
    match b {
        Some(b) => {
            let b = tape.param(b);
            tape.add(y, b)
        }
        None => Ok(y),
    }
}

/// Two-layer perceptron `gelu(x W1 + b1) W2 + b2`.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl Mlp {
    pub fn register<F: Real>(
        store: &mut ParamStore<F>,
        prefix: &str,
        dims: (usize, usize, usize),
        trainable: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let (i, h, o) = dims;
        Mlp {
            w1: store.add(format!("{prefix}.w1"), glorot(rng, i, h), trainable),
            b1: store.add(format!("{prefix}.b1"), Tensor::zeros(&[h]), trainable),
            w2: store.add(format!("{prefix}.w2"), glorot(rng, h, o), trainable),
            b2: store.add(format!("{prefix}.b2"), Tensor::zeros(&[o]), trainable),
        }
    }

    pub fn forward<F: Real>(&self, tape: &mut Tape<'_, F>, x: Var) -> Result<Var> {
        let h = linear(tape, x, self.w1, Some(self.b1))?;
        let h = tape.gelu(h);
        linear(tape, h, self.w2, Some(self.b2))
    }
}

/// Per-channel decoder: maps each `[.., C, d]` token to `T` steps and
/// returns `[.., T, C]`.
pub fn decode<F: Real>(tape: &mut Tape<'_, F>, mlp: &Mlp, z: Var) -> Result<Var> {
    let y = mlp.forward(tape, z)?;
    tape.transpose(y)
}
