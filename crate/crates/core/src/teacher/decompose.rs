//! Moving-average trend/season split along the feature axis.

use crate::error::{Error, Result};
use crate::numerics::{Real, Tape, Tensor, Var};

fn check_kernel(kernel: usize, d: usize) -> Result<()> {
    if kernel == 0 || kernel % 2 == 0 {
        return Err(Error::config(format!("moving-average kernel must be odd and >= 1, got {kernel}")));
    }
    if kernel > d {
        return Err(Error::config(format!("moving-average kernel {kernel} exceeds width {d}")));
    }
    Ok(())
}

/// `d x d` matrix `A` with `trend = e A`: a centred window of `kernel`
/// taps whose out-of-range taps are replaced by the nearest edge value.
pub fn moving_average_matrix<F: Real>(d: usize, kernel: usize) -> Result<Tensor<F>> {
    check_kernel(kernel, d)?;
    let half = (kernel / 2) as isize;
    let w = 1.0 / kernel as f64;
    let mut a = vec![0.0f64; d * d];
    for i in 0..d as isize {
        for off in -half..=half {
            let j = (i + off).clamp(0, d as isize - 1);
            a[j as usize * d + i as usize] += w;
        }
    }
    Tensor::from_f64(&[d, d], &a)
}

/// Taped decomposition of `[.., d]` rows; returns `(trend, season)` with
/// `season = e - trend`.
pub fn decompose_taped<F: Real>(tape: &mut Tape<'_, F>, e: Var, kernel: usize) -> Result<(Var, Var)> {
    let d = *tape.shape(e).last().expect("rank >= 1");
    let a = tape.constant(moving_average_matrix(d, kernel)?);
    let trend = tape.matmul(e, a)?;
    let season = tape.sub(e, trend)?;
    Ok((trend, season))
}

/// Untaped [`decompose_taped`].
pub fn decompose<F: Real>(e: &Tensor<F>, kernel: usize) -> Result<(Tensor<F>, Tensor<F>)> {
    let mut tape = Tape::new();
    let x = tape.constant(e.clone());
    let (t, s) = decompose_taped(&mut tape, x, kernel)?;
    Ok((tape.value(t).clone(), tape.value(s).clone()))
}
