//! Low-rank adapters on frozen projections.

use crate::error::{Error, Result};
use crate::numerics::params::ParamId;
use crate::numerics::{Real, Tape, Tensor, Var};

/// Adapter pair `A: d x r`, `B: r x d_out`.
#[derive(Debug, Clone, Copy)]
pub struct Lora {
    pub a: ParamId,
    pub b: ParamId,
}

/// `x W (+ bias) + scaling (x A) B`, the adapter term skipped when `lora`
/// is absent.
pub fn lora_linear<F: Real>(
    tape: &mut Tape<'_, F>,
    x: Var,
    w: Var,
    bias: Option<Var>,
    lora: Option<(Var, Var)>,
    scaling: F,
) -> Result<Var> {
    let mut y = tape.matmul(x, w)?;
    if let Some(b) = bias {
        y = tape.add(y, b)?;
    }
    if let Some((a, b)) = lora {
        let r = tape.shape(a)[1];
        if r == 0 || r > tape.shape(w)[0] {
            return Err(Error::config(format!(
                "adapter rank {r} must be within 1..={}",
                tape.shape(w)[0]
            )));
        }
        let xa = tape.matmul(x, a)?;
        let xab = tape.matmul(xa, b)?;
        let upd = tape.scale(xab, scaling);
        y = tape.add(y, upd)?;
    }
    Ok(y)
}

/// `W + scaling A B`.
pub fn merge<F: Real>(w: &Tensor<F>, a: &Tensor<F>, b: &Tensor<F>, scaling: F) -> Result<Tensor<F>> {
    let ab = a.matmul(b)?;
    if ab.shape() != w.shape() {
        return Err(Error::shape("lora merge", w.shape(), ab.shape()));
    }
    let data = w.data().iter().zip(ab.data()).map(|(&x, &y)| x + scaling * y).collect();
    Tensor::new(w.shape().to_vec(), data)
}
