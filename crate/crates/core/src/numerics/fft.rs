//! Real FFT along the last axis, unnormalized forward convention:
//! `X_k = sum_n x_n exp(-2 pi i k n / d)`, keeping `k = 0..=d/2`.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

/// Complex array stored as separate real and imaginary planes.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrum<F> {
    pub re: Tensor<F>,
    pub im: Tensor<F>,
}

impl<F: Real> ComplexSpectrum<F> {
    pub fn new(re: Tensor<F>, im: Tensor<F>) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(Error::shape("complex spectrum", re.shape(), im.shape()));
        }
        Ok(ComplexSpectrum { re, im })
    }

    pub fn shape(&self) -> &[usize] {
        self.re.shape()
    }

    pub fn power(&self) -> Tensor<F> {
        let data = self
            .re
            .data()
            .iter()
            .zip(self.im.data())
            .map(|(&r, &i)| r * r + i * i)
            .collect();
        Tensor::new(self.re.shape().to_vec(), data).expect("same shape")
    }
}

/// Number of non-redundant coefficients of a length-`d` real signal.
pub fn rfft_len(d: usize) -> usize {
    d / 2 + 1
}

/// Forward real FFT of every row (last axis) of `data`, writing the
/// half spectrum into `re`/`im`.
pub(crate) fn rfft_rows<F: Real>(data: &[F], d: usize, re: &mut [F], im: &mut [F]) {
    let half = rfft_len(d);
    let mut planner = FftPlanner::<F>::new();
    let fft = planner.plan_fft_forward(d);
    let rows = data.len() / d;
    let mut buf: Vec<Complex<F>> = Vec::with_capacity(d);
    for r in 0..rows {
        buf.clear();
        buf.extend(data[r * d..(r + 1) * d].iter().map(|&x| Complex::new(x, F::zero())));
        fft.process(&mut buf);
        for k in 0..half {
            re[r * half + k] = buf[k].re;
            im[r * half + k] = buf[k].im;
        }
    }
}

/// Adjoint of [`rfft_rows`]: accumulates
/// `grad_x[n] += sum_k (gr_k cos(2 pi k n / d) - gi_k sin(2 pi k n / d))`.
/// Either plane may be absent (treated as zero).
pub(crate) fn rfft_adjoint_rows<F: Real>(
    grad_re: Option<&[F]>,
    grad_im: Option<&[F]>,
    d: usize,
    grad_x: &mut [F],
) {
    let half = rfft_len(d);
    let mut planner = FftPlanner::<F>::new();
    let ifft = planner.plan_fft_inverse(d);
    let rows = grad_x.len() / d;
    let mut buf = vec![Complex::new(F::zero(), F::zero()); d];
    for r in 0..rows {
        for (k, slot) in buf.iter_mut().enumerate() {
            *slot = if k < half {
                Complex::new(
                    grad_re.map_or(F::zero(), |g| g[r * half + k]),
                    grad_im.map_or(F::zero(), |g| g[r * half + k]),
                )
            } else {
                Complex::new(F::zero(), F::zero())
            };
        }
        ifft.process(&mut buf);
        for n in 0..d {
            grad_x[r * d + n] = grad_x[r * d + n] + buf[n].re;
        }
    }
}

/// Real FFT along the last axis of `x`.
pub fn rfft<F: Real>(x: &Tensor<F>) -> Result<ComplexSpectrum<F>> {
    let d = *x.shape().last().expect("rank >= 1");
    if d < 2 {
        return Err(Error::config(format!("rfft needs an axis extent >= 2, got {d}")));
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().expect("rank >= 1") = rfft_len(d);
    let n: usize = shape.iter().product();
    let (mut re, mut im) = (vec![F::zero(); n], vec![F::zero(); n]);
    rfft_rows(x.data(), d, &mut re, &mut im);
    ComplexSpectrum::new(Tensor::new(shape.clone(), re)?, Tensor::new(shape, im)?)
}

/// Inverse of [`rfft`] for a signal of original length `d`.
pub fn irfft<F: Real>(spec: &ComplexSpectrum<F>, d: usize) -> Result<Tensor<F>> {
    let half = *spec.shape().last().expect("rank >= 1");
    if half != rfft_len(d) {
        return Err(Error::shape("irfft", spec.shape(), &[d]));
    }
    let mut planner = FftPlanner::<F>::new();
    let ifft = planner.plan_fft_inverse(d);
    let rows = spec.re.numel() / half;
    let mut out = Vec::with_capacity(rows * d);
    let mut buf = vec![Complex::new(F::zero(), F::zero()); d];
    let scale = F::one() / F::lit(d as f64);
    for r in 0..rows {
        for k in 0..d {
            // Hermitian extension of the half spectrum.
            let (kk, conj) = if k < half { (k, false) } else { (d - k, true) };
            let re = spec.re.data()[r * half + kk];
            let im = spec.im.data()[r * half + kk];
            buf[k] = Complex::new(re, if conj { -im } else { im });
        }
        ifft.process(&mut buf);
        out.extend(buf.iter().map(|c| c.re * scale));
    }
    let mut shape = spec.shape().to_vec();
    *shape.last_mut().expect("rank >= 1") = d;
    Tensor::new(shape, out)
}
