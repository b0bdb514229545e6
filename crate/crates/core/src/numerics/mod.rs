//! Dense tensors, real FFT, and the reverse-mode tape everything else is
//! built on.

pub mod fft;
pub mod gradcheck;
pub mod optim;
pub mod params;
mod real;
pub mod rng;
pub mod tape;
mod tensor;

pub use fft::{irfft, rfft, rfft_len, ComplexSpectrum};
pub use gradcheck::{grad_check, GradCheckReport};
pub use optim::{Adam, AdamConfig};
pub use params::{Param, ParamId, ParamStore};
pub use real::{DType, Real};
pub use tape::{Gradients, LossKind, MaskGradient, SpectrumVar, Tape, Var};
pub use tensor::Tensor;

/// Untaped softmax along the last axis.
pub fn softmax<F: Real>(x: &Tensor<F>) -> crate::error::Result<Tensor<F>> {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let s = tape.softmax(v)?;
    Ok(tape.value(s).clone())
}
