//! Dense row-major tensors and the raw kernels the tape is built on.

use crate::error::{Error, Result};
use crate::numerics::Real;

/// Dense n-dimensional array, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("tensor", &shape, &[data.len()]));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::shape("tensor", &shape, &[data.len()]));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, F::zero())
    }

    pub fn full(shape: &[usize], value: F) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: F) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = F::one();
        }
        t
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), data.iter().map(|&x| F::lit(x)).collect())
    }

    /// Build a matrix from nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::config("ragged rows"));
        }
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::from_f64(&[r, c], &data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn item(&self) -> F {
        self.data[0]
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.as_f64()).collect()
    }

    pub fn cast<G: Real>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| G::lit(x.as_f64())).collect(),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn at(&self, index: &[usize]) -> F {
        let mut flat = 0;
        for (i, (&ix, &d)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < d, "index {ix} out of bounds for axis {i} of extent {d}");
            flat = flat * d + ix;
        }
        self.data[flat]
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Explicit NaN/Inf detection; `name` ends up in the error message.
    pub fn check_finite(&self, name: &str) -> Result<()> {
        match self.data.iter().position(|x| !x.is_finite()) {
            Some(i) => Err(Error::NonFinite(format!(
                "{name} (flat index {i} of shape {:?})",
                self.shape
            ))),
            None => Ok(()),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> F {
        self.data
            .iter()
            .zip(&other.data)
            .fold(F::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn max_abs(&self) -> F {
        self.data.iter().fold(F::zero(), |m, &a| m.max(a.abs()))
    }

    /// Untaped matrix product with the same broadcasting rules as the tape op.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let dims = MatmulDims::resolve(&self.shape, &other.shape)?;
        let mut out = vec![F::zero(); dims.out_len()];
        matmul_into(&self.data, &other.data, &mut out, &dims);
        Ok(Tensor {
            shape: dims.out_shape,
            data: out,
        })
    }

    /// Swap the last two axes.
    pub fn transpose(&self) -> Self {
        let r = self.rank();
        assert!(r >= 2, "transpose needs rank >= 2");
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(&axes)
    }

    pub fn permute(&self, axes: &[usize]) -> Self {
        let (shape, data) = permute_data(&self.data, &self.shape, axes);
        Tensor { shape, data }
    }

    /// Row slice `[start, end)` along axis 0.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.shape[0] {
            return Err(Error::config(format!(
                "row slice {start}..{end} out of range for {:?}",
                self.shape
            )));
        }
        let row: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Ok(Tensor {
            shape,
            data: self.data[start * row..end * row].to_vec(),
        })
    }

    /// Stack equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor<F>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::config("cannot stack zero tensors"))?;
        let mut data = Vec::with_capacity(first.numel() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::shape("stack", &first.shape, &t.shape));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Tensor { shape, data })
    }

    /// Inverse of [`Tensor::stack`].
    pub fn unstack(&self) -> Vec<Tensor<F>> {
        let inner: Vec<usize> = self.shape[1..].to_vec();
        let n: usize = inner.iter().product();
        self.data
            .chunks(n)
            .map(|c| Tensor {
                shape: inner.clone(),
                data: c.to_vec(),
            })
            .collect()
    }
}

/// Resolved extents of a (possibly batched) matrix product.
///
/// `a` is `[..batch, m, k]`; `b` is `[..tail, k, n]` where `tail` must be a
/// suffix of `batch` (broadcast over the leading batch axes).
#[derive(Debug, Clone)]
pub(crate) struct MatmulDims {
    pub batch: usize,
    pub b_batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub out_shape: Vec<usize>,
}

impl MatmulDims {
    pub fn resolve(a: &[usize], b: &[usize]) -> Result<Self> {
        if a.len() < 2 || b.len() < 2 || a.len() < b.len() {
            return Err(Error::shape("matmul", a, b));
        }
        let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
        let (kb, n) = (b[b.len() - 2], b[b.len() - 1]);
        let a_batch = &a[..a.len() - 2];
        let b_batch = &b[..b.len() - 2];
        if k != kb || !a_batch.ends_with(b_batch) {
            return Err(Error::shape("matmul", a, b));
        }
        let mut out_shape = a_batch.to_vec();
        out_shape.push(m);
        out_shape.push(n);
        Ok(MatmulDims {
            batch: a_batch.iter().product(),
            b_batch: b_batch.iter().product(),
            m,
            k,
            n,
            out_shape,
        })
    }

    pub fn out_len(&self) -> usize {
        self.batch * self.m * self.n
    }
}

pub(crate) fn matmul_into<F: Real>(a: &[F], b: &[F], out: &mut [F], d: &MatmulDims) {
    let (m, k, n) = (d.m, d.k, d.n);
    for bi in 0..d.batch {
        let a_blk = &a[bi * m * k..(bi + 1) * m * k];
        let bb = bi % d.b_batch;
        let b_blk = &b[bb * k * n..(bb + 1) * k * n];
        let o_blk = &mut out[bi * m * n..(bi + 1) * m * n];
        for i in 0..m {
            let o_row = &mut o_blk[i * n..(i + 1) * n];
            for (p, &av) in a_blk[i * k..(i + 1) * k].iter().enumerate() {
                if av == F::zero() {
                    continue;
                }
                let b_row = &b_blk[p * n..(p + 1) * n];
                for (o, &bv) in o_row.iter_mut().zip(b_row) {
                    *o = *o + av * bv;
                }
            }
        }
    }
}

/// `grad_a += grad_out @ b^T` and `grad_b += a^T @ grad_out`, summing
/// `grad_b` over broadcast batch axes.
pub(crate) fn matmul_backward<F: Real>(
    a: &[F],
    b: &[F],
    grad_out: &[F],
    grad_a: Option<&mut [F]>,
    grad_b: Option<&mut [F]>,
    d: &MatmulDims,
) {
    let (m, k, n) = (d.m, d.k, d.n);
    if let Some(ga) = grad_a {
        for bi in 0..d.batch {
            let bb = bi % d.b_batch;
            let b_blk = &b[bb * k * n..(bb + 1) * k * n];
            let g_blk = &grad_out[bi * m * n..(bi + 1) * m * n];
            let ga_blk = &mut ga[bi * m * k..(bi + 1) * m * k];
            for i in 0..m {
                let g_row = &g_blk[i * n..(i + 1) * n];
                for p in 0..k {
                    let b_row = &b_blk[p * n..(p + 1) * n];
                    let mut s = F::zero();
                    for (&g, &bv) in g_row.iter().zip(b_row) {
                        s = s + g * bv;
                    }
                    ga_blk[i * k + p] = ga_blk[i * k + p] + s;
                }
            }
        }
    }
    if let Some(gb) = grad_b {
        for bi in 0..d.batch {
            let bb = bi % d.b_batch;
            let a_blk = &a[bi * m * k..(bi + 1) * m * k];
            let g_blk = &grad_out[bi * m * n..(bi + 1) * m * n];
            let gb_blk = &mut gb[bb * k * n..(bb + 1) * k * n];
            for i in 0..m {
                let g_row = &g_blk[i * n..(i + 1) * n];
                for p in 0..k {
                    let av = a_blk[i * k + p];
                    if av == F::zero() {
                        continue;
                    }
                    let gb_row = &mut gb_blk[p * n..(p + 1) * n];
                    for (o, &g) in gb_row.iter_mut().zip(g_row) {
                        *o = *o + av * g;
                    }
                }
            }
        }
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Returns the permuted shape and data: `out.shape[i] == shape[axes[i]]`.
pub(crate) fn permute_data<F: Copy>(data: &[F], shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<F>) {
    assert_eq!(axes.len(), shape.len(), "permutation rank mismatch");
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let moved: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; shape.len()];
    let mut src = 0usize;
    for _ in 0..data.len() {
        out.push(data[src]);
        for ax in (0..idx.len()).rev() {
            idx[ax] += 1;
            src += moved[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src -= moved[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    (out_shape, out)
}

pub(crate) fn inverse_permutation(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

/// Numpy-style broadcast of two shapes (right aligned, extents equal or 1).
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let r = a.len().max(b.len());
    let mut out = vec![0; r];
    for i in 0..r {
        let da = if i + a.len() >= r { a[i + a.len() - r] } else { 1 };
        let db = if i + b.len() >= r { b[i + b.len() - r] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every flat index of `out_shape`, the flat index of the broadcast
/// source of shape `src_shape`. `None` when the shapes already coincide.
pub(crate) fn broadcast_map(out_shape: &[usize], src_shape: &[usize]) -> Option<Vec<usize>> {
    if out_shape == src_shape {
        return None;
    }
    let n: usize = out_shape.iter().product();
    let src_len: usize = src_shape.iter().product();
    let r = out_shape.len();
    let off = r - src_shape.len();
    // Fast path: source equals a suffix of the output shape.
    if out_shape[off..] == *src_shape {
        return Some((0..n).map(|i| i % src_len).collect());
    }
    let src_strides = strides(src_shape);
    let mut eff = vec![0usize; r];
    for i in 0..src_shape.len() {
        if src_shape[i] != 1 {
            eff[i + off] = src_strides[i];
        }
    }
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; r];
    let mut src = 0usize;
    for _ in 0..n {
        map.push(src);
        for ax in (0..r).rev() {
            idx[ax] += 1;
            src += eff[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src -= eff[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    Some(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data).unwrap()
    }

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::<f64>::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::<f64>::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn matmul_hand_case() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 1], &[1.0, 1.0]);
        assert_eq!(a.matmul(&b).unwrap().data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_identity_and_zero() {
        let a = t(&[2, 3], &[1.0, -2.0, 0.5, 4.0, 3.0, -1.0]);
        assert_eq!(Tensor::eye(2).matmul(&a).unwrap(), a);
        let z = Tensor::<f64>::zeros(&[2, 2]).matmul(&a).unwrap();
        assert!(z.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = t(&[2, 3], &[0.0; 6]);
        let b = t(&[2, 3], &[0.0; 6]);
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn batched_matmul_broadcasts_weight() {
        let a = t(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]);
        let w = t(&[2, 2], &[1.0, 0.0, 0.0, 2.0]);
        assert_eq!(a.matmul(&w).unwrap().data(), &[1.0, 4.0, 3.0, 8.0]);
    }

    #[test]
    fn permute_roundtrip() {
        let x = t(&[2, 3, 4], &(0..24).map(f64::from).collect::<Vec<_>>());
        let p = x.permute(&[2, 0, 1]);
        assert_eq!(p.shape(), &[4, 2, 3]);
        assert_eq!(p.at(&[3, 1, 2]), x.at(&[1, 2, 3]));
        assert_eq!(p.permute(&inverse_permutation(&[2, 0, 1])), x);
    }

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[4, 3, 1], &[3, 5]), Some(vec![4, 3, 5]));
        assert_eq!(broadcast_shape(&[2, 3], &[4]), None);
        let map = broadcast_map(&[2, 3], &[2, 1]).unwrap();
        assert_eq!(map, vec![0, 0, 0, 1, 1, 1]);
        let map = broadcast_map(&[2, 3], &[3]).unwrap();
        assert_eq!(map, vec![0, 1, 2, 0, 1, 2]);
    }

    #[test]
    fn check_finite_names_the_tensor() {
        let x = t(&[2], &[1.0, f64::NAN]);
        let msg = x.check_finite("decoder.out").unwrap_err().to_string();
        assert!(msg.contains("decoder.out"));
    }
}
