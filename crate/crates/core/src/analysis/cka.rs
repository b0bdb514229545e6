use nalgebra::DMatrix;

use crate::error::{Error, Result};

fn centered(data: &[f64], n: usize, p: usize) -> DMatrix<f64> {
    let mut m = DMatrix::from_row_slice(n, p, data);
    for mut col in m.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    m
}

/// Linear CKA between row-major `x` (`n x p`) and `y` (`n x q`):
/// `|Yc^T Xc|_F^2 / (|Xc^T Xc|_F |Yc^T Yc|_F)` on column-centered inputs.
/// A zero-variance argument gives 0 and a warning.
pub fn cka(x: &[f64], y: &[f64], n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::config("CKA needs at least two rows"));
    }
    if x.len() % n != 0 || y.len() % n != 0 || x.is_empty() || y.is_empty() {
        return Err(Error::shape("cka", &[x.len()], &[y.len()]));
    }
    let xc = centered(x, n, x.len() / n);
    let yc = centered(y, n, y.len() / n);
    let cross = (yc.transpose() * &xc).norm_squared();
    let nx = (xc.transpose() * &xc).norm();
    let ny = (yc.transpose() * &yc).norm();
    if nx == 0.0 || ny == 0.0 {
        log::warn!("CKA of a zero-variance representation is defined as 0");
        return Ok(0.0);
    }
    Ok(cross / (nx * ny))
}
