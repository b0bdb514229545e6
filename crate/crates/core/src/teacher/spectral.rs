//! Adaptive spectral block, dominant spectral projection and the
//! horizon-conditioned capacity schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{rfft_len, ComplexSpectrum, MaskGradient, Real, SpectrumVar, Tape, Tensor, Var};

/// Nonempty list of `(horizon, capacity)` pairs with strictly increasing
/// horizons.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(usize, usize)>", into = "Vec<(usize, usize)>")]
pub struct CapacitySchedule {
    pairs: Vec<(usize, usize)>,
}

impl CapacitySchedule {
    pub fn new(pairs: Vec<(usize, usize)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::config("capacity schedule is empty"));
        }
        if pairs.iter().any(|&(_, c)| c == 0) {
            return Err(Error::config("capacity schedule has a zero capacity"));
        }
        if pairs.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::config("capacity schedule horizons must be strictly increasing"));
        }
        Ok(CapacitySchedule { pairs })
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn max_horizon(&self) -> usize {
        self.pairs.last().expect("nonempty").0
    }

    pub fn max_capacity(&self) -> usize {
        self.pairs.iter().map(|p| p.1).max().expect("nonempty")
    }
}

impl Default for CapacitySchedule {
    fn default() -> Self {
        CapacitySchedule {
            pairs: vec![(96, 64), (192, 96), (336, 96), (720, 128)],
        }
    }
}

impl TryFrom<Vec<(usize, usize)>> for CapacitySchedule {
    type Error = Error;
    fn try_from(v: Vec<(usize, usize)>) -> Result<Self> {
        CapacitySchedule::new(v)
    }
}

impl From<CapacitySchedule> for Vec<(usize, usize)> {
    fn from(s: CapacitySchedule) -> Self {
        s.pairs
    }
}

/// Capacity of the nearest scheduled horizon; on a tie the smaller
/// horizon wins.
pub fn select_capacity(t: usize, schedule: &CapacitySchedule) -> usize {
    let mut best = schedule.pairs[0];
    for &p in &schedule.pairs[1..] {
        // Horizons are increasing, so a strict comparison keeps the smaller one on ties.
        if p.0.abs_diff(t) < best.0.abs_diff(t) {
            best = p;
        }
    }
    best.1
}

/// Layout of the learnable power threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdShape {
    #[default]
    Scalar,
    PerChannel,
    PerFrequency,
}

impl ThresholdShape {
    pub fn shape(self, channels: usize, d_fft: usize) -> Vec<usize> {
        match self {
            ThresholdShape::Scalar => vec![1],
            ThresholdShape::PerChannel => vec![channels, 1],
            ThresholdShape::PerFrequency => vec![d_fft],
        }
    }
}

/// Taped adaptive spectral block inputs.
#[derive(Debug, Clone, Copy)]
pub struct AsbVars {
    pub gamma_g: SpectrumVar,
    pub gamma_l: SpectrumVar,
    pub theta: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct AsbOutput {
    pub spectrum: SpectrumVar,
    pub power: Var,
    pub mask: Var,
}

/// Complex elementwise product with broadcasting.
pub fn complex_mul<F: Real>(tape: &mut Tape<'_, F>, a: SpectrumVar, b: SpectrumVar) -> Result<SpectrumVar> {
    let rr = tape.mul(a.re, b.re)?;
    let ii = tape.mul(a.im, b.im)?;
    let ri = tape.mul(a.re, b.im)?;
    let ir = tape.mul(a.im, b.re)?;
    Ok(SpectrumVar {
        re: tape.sub(rr, ii)?,
        im: tape.add(ri, ir)?,
    })
}

/// `F = rfft(e)`, `P = |F|^2`, `M = 1(P > theta)`,
/// `F_spec = Gamma_G * F + Gamma_L * (F * M)`.
pub fn adaptive_spectral<F: Real>(
    tape: &mut Tape<'_, F>,
    e: Var,
    p: &AsbVars,
    mode: MaskGradient,
) -> Result<AsbOutput> {
    let f = tape.rfft(e)?;
    let rr = tape.mul(f.re, f.re)?;
    let ii = tape.mul(f.im, f.im)?;
    let power = tape.add(rr, ii)?;
    let mask = tape.threshold_mask(power, p.theta, mode)?;
    let masked = SpectrumVar {
        re: tape.mul(f.re, mask)?,
        im: tape.mul(f.im, mask)?,
    };
    let g = complex_mul(tape, p.gamma_g, f)?;
    let l = complex_mul(tape, p.gamma_l, masked)?;
    let spectrum = SpectrumVar {
        re: tape.add(g.re, l.re)?,
        im: tape.add(g.im, l.im)?,
    };
    Ok(AsbOutput { spectrum, power, mask })
}

/// Untaped [`adaptive_spectral`] on plain tensors.
pub fn adaptive_spectral_tensor<F: Real>(
    e: &Tensor<F>,
    gamma_g: &ComplexSpectrum<F>,
    gamma_l: &ComplexSpectrum<F>,
    theta: &Tensor<F>,
) -> Result<ComplexSpectrum<F>> {
    let mut tape = Tape::new();
    let x = tape.constant(e.clone());
    let vars = AsbVars {
        gamma_g: SpectrumVar {
            re: tape.constant(gamma_g.re.clone()),
            im: tape.constant(gamma_g.im.clone()),
        },
        gamma_l: SpectrumVar {
            re: tape.constant(gamma_l.re.clone()),
            im: tape.constant(gamma_l.im.clone()),
        },
        theta: tape.constant(theta.clone()),
    };
    let out = adaptive_spectral(&mut tape, x, &vars, MaskGradient::default())?;
    ComplexSpectrum::new(
        tape.value(out.spectrum.re).clone(),
        tape.value(out.spectrum.im).clone(),
    )
}

/// Real projection `F_spec W_spec` of both planes, compressing the
/// frequency axis from `d_FFT` to `d_red`.
pub fn dsp<F: Real>(tape: &mut Tape<'_, F>, s: SpectrumVar, w_spec: Var) -> Result<SpectrumVar> {
    let d_fft = *tape.shape(s.re).last().expect("rank >= 1");
    let ws = tape.shape(w_spec).to_vec();
    if ws.len() != 2 || ws[0] != d_fft {
        return Err(Error::shape("dsp", tape.shape(s.re), &ws));
    }
    if ws[1] > d_fft {
        return Err(Error::config(format!(
            "spectral capacity {} exceeds the {d_fft} available coefficients",
            ws[1]
        )));
    }
    Ok(SpectrumVar {
        re: tape.matmul(s.re, w_spec)?,
        im: tape.matmul(s.im, w_spec)?,
    })
}

/// `d_FFT` for a representation of width `d_model`.
pub fn spectrum_width(d_model: usize) -> usize {
    rfft_len(d_model)
}

/// Median of a slice (mean of the two middle values for even lengths).
pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty slice");
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
