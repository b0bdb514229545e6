//! Reverse-mode differentiation tape.
//!
//! Every op appends one node holding its forward value. `backward` walks the
//! nodes in reverse insertion order, which is a valid reverse topological
//! order because inputs always precede their consumers. Nodes that do not
//! depend on a trainable leaf are never visited.

use crate::error::{Error, Result};
use crate::numerics::fft::{rfft_adjoint_rows, rfft_len, rfft_rows};
use crate::numerics::params::{ParamId, ParamStore};
use crate::numerics::tensor::{
    broadcast_map, broadcast_shape, inverse_permutation, matmul_backward, matmul_into,
    permute_data, MatmulDims,
};
use crate::numerics::{Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Pair of tape nodes holding a complex array as real/imaginary planes.
#[derive(Debug, Clone, Copy)]
pub struct SpectrumVar {
    pub re: Var,
    pub im: Var,
}

/// Elementwise discrepancy measures, all mean-reduced to a scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    L1,
    SmoothL1,
    Mse,
    Smape,
    Mase,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::L1,
        LossKind::SmoothL1,
        LossKind::Mse,
        LossKind::Smape,
        LossKind::Mase,
    ];
}

/// Transition point of the smooth L1 loss.
pub const SMOOTH_L1_BETA: f64 = 1.0;
/// Cells whose SMAPE denominator falls below this contribute zero.
pub const SMAPE_EPS: f64 = 1e-8;

/// Backward rule for the hard power-threshold mask.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskGradient {
    /// Treat the indicator as `sigmoid((P - theta) / temperature)` when
    /// propagating into the threshold.
    StraightThrough { temperature: f64 },
    /// Exact almost-everywhere derivative, i.e. zero.
    Exact,
}

impl Default for MaskGradient {
    fn default() -> Self {
        MaskGradient::StraightThrough { temperature: 1.0 }
    }
}

#[derive(Debug, Clone)]
enum Op<F> {
    Leaf,
    Param(ParamId),
    MatMul { a: Var, b: Var, dims: MatmulDims },
    Permute { x: Var, axes: Vec<usize> },
    Reshape { x: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: F },
    Offset { x: Var },
    Gelu { x: Var },
    Sigmoid { x: Var },
    Magnitude { re: Var, im: Var },
    Softmax { x: Var },
    Normalize { x: Var, inv_std: Vec<F> },
    MeanLast { x: Var },
    ConcatLast { parts: Vec<Var> },
    Sum { x: Var },
    Mean { x: Var },
    RfftRe { x: Var },
    RfftIm { x: Var },
    ThresholdMask { power: Var, theta: Var, mode: MaskGradient },
    Loss { pred: Var, target: Var, kind: LossKind, scale: Option<Vec<F>> },
}

impl<F> Op<F> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::MatMul { .. } => "matmul",
            Op::Permute { .. } => "permute",
            Op::Reshape { .. } => "reshape",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Offset { .. } => "offset",
            Op::Gelu { .. } => "gelu",
            Op::Sigmoid { .. } => "sigmoid",
            Op::Magnitude { .. } => "magnitude",
            Op::Softmax { .. } => "softmax",
            Op::Normalize { .. } => "normalize",
            Op::MeanLast { .. } => "mean_last",
            Op::ConcatLast { .. } => "concat_last",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::RfftRe { .. } => "rfft_re",
            Op::RfftIm { .. } => "rfft_im",
            Op::ThresholdMask { .. } => "threshold_mask",
            Op::Loss { .. } => "loss",
        }
    }
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    needs_grad: bool,
    label: Option<String>,
}

/// Recording of one forward pass.
pub struct Tape<'s, F: Real> {
    store: Option<&'s ParamStore<F>>,
    nodes: Vec<Node<F>>,
    param_vars: Vec<Option<Var>>,
}

const GELU_C: f64 = 0.044715;

fn gelu_parts(x: f64) -> (f64, f64) {
    // tanh approximation used by GPT-2
    let k = (2.0 / std::f64::consts::PI).sqrt();
    let u = k * (x + GELU_C * x * x * x);
    let t = u.tanh();
    let y = 0.5 * x * (1.0 + t);
    let du = k * (1.0 + 3.0 * GELU_C * x * x);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
    (y, dy)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn sign<F: Real>(x: F) -> F {
    if x > F::zero() {
        F::one()
    } else if x < F::zero() {
        -F::one()
    } else {
        F::zero()
    }
}

impl<'s, F: Real> Default for Tape<'s, F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'s, F: Real> Tape<'s, F> {
    /// Tape without a parameter registry (constants and inputs only).
    pub fn new() -> Self {
        Tape {
            store: None,
            nodes: Vec::new(),
            param_vars: Vec::new(),
        }
    }

    pub fn with_params(store: &'s ParamStore<F>) -> Self {
        Tape {
            store: Some(store),
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            label: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Attach a human-readable name used in non-finite diagnostics.
    pub fn label(&mut self, v: Var, name: impl Into<String>) -> Var {
        self.nodes[v.0].label = Some(name.into());
        v
    }

    /// First node (in forward order) containing NaN or Inf.
    pub fn first_non_finite(&self) -> Option<String> {
        self.nodes.iter().enumerate().find_map(|(i, n)| {
            (!n.value.is_finite()).then(|| {
                let what = match (&n.label, &n.op) {
                    (Some(l), _) => l.clone(),
                    (None, Op::Param(id)) => self
                        .store
                        .map(|s| s.get(*id).name.clone())
                        .unwrap_or_else(|| "param".into()),
                    (None, op) => op.name().to_string(),
                };
                format!("{what} (node {i}, shape {:?})", n.value.shape())
            })
        })
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf input; when `requires_grad` its gradient is reported by `backward`.
    pub fn input(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Copy of `v` cut off from gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.push(value, Op::Leaf, false)
    }

    /// Registry parameter as a leaf. Frozen parameters become constants and
    /// therefore never accumulate gradient.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let store = self.store.expect("tape created without a parameter store");
        let p = store.get(id);
        let v = self.push(p.value.clone(), Op::Param(id), p.trainable);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let dims = MatmulDims::resolve(self.shape(a), self.shape(b))?;
        let mut out = vec![F::zero(); dims.out_len()];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, &dims);
        let value = Tensor::new(dims.out_shape.clone(), out)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::MatMul { a, b, dims }, ng))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x);
        let mut sorted = axes.to_vec();
        sorted.sort_unstable();
        if sorted != (0..shape.len()).collect::<Vec<_>>() {
            return Err(Error::shape("permute", shape, axes));
        }
        let (s, d) = permute_data(self.value(x).data(), shape, axes);
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(s, d)?, Op::Permute { x, axes: axes.to_vec() }, ng))
    }

    /// Swap the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let r = self.shape(x).len();
        if r < 2 {
            return Err(Error::shape("transpose", self.shape(x), &[]));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(x, &axes)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::Reshape { x }, ng))
    }

    fn binary(&mut self, a: Var, b: Var, op: &'static str, f: impl Fn(F, F) -> F) -> Result<Tensor<F>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let out_shape = broadcast_shape(sa, sb).ok_or_else(|| Error::shape(op, sa, sb))?;
        let ma = broadcast_map(&out_shape, sa);
        let mb = broadcast_map(&out_shape, sb);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let n: usize = out_shape.iter().product();
        let data = (0..n)
            .map(|i| {
                let x = da[ma.as_ref().map_or(i, |m| m[i])];
                let y = db[mb.as_ref().map_or(i, |m| m[i])];
                f(x, y)
            })
            .collect();
        Tensor::new(out_shape, data)
    }

    /// Broadcasting elementwise sum.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "add", |x, y| x + y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Add { a, b }, ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "sub", |x, y| x - y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Sub { a, b }, ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "mul", |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Mul { a, b }, ng))
    }

    pub fn scale(&mut self, x: Var, c: F) -> Var {
        let v = self.value(x).map(|e| e * c);
        let ng = self.ng(x);
        self.push(v, Op::Scale { x, c }, ng)
    }

    /// `x + c` for a constant scalar `c`.
    pub fn offset(&mut self, x: Var, c: F) -> Var {
        let v = self.value(x).map(|e| e + c);
        let ng = self.ng(x);
        self.push(v, Op::Offset { x }, ng)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| F::lit(gelu_parts(e.as_f64()).0));
        let ng = self.ng(x);
        self.push(v, Op::Gelu { x }, ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| F::lit(sigmoid(e.as_f64())));
        let ng = self.ng(x);
        self.push(v, Op::Sigmoid { x }, ng)
    }

    /// `sqrt(re^2 + im^2)`; the gradient at exactly zero is taken as zero.
    pub fn magnitude(&mut self, re: Var, im: Var) -> Result<Var> {
        if self.shape(re) != self.shape(im) {
            return Err(Error::shape("magnitude", self.shape(re), self.shape(im)));
        }
        let data = self
            .value(re)
            .data()
            .iter()
            .zip(self.value(im).data())
            .map(|(&r, &i)| (r * r + i * i).sqrt())
            .collect();
        let v = Tensor::new(self.shape(re).to_vec(), data)?;
        let ng = self.ng(re) || self.ng(im);
        Ok(self.push(v, Op::Magnitude { re, im }, ng))
    }

    /// Softmax over the last axis with max subtraction. Entries equal to
    /// `-inf` receive zero weight.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.data().iter().any(|e| e.is_nan() || *e == F::infinity()) {
            return Err(Error::NonFinite("softmax input".into()));
        }
        let n = *xv.shape().last().expect("rank >= 1");
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(n) {
            let m = row.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
            let mut s = F::zero();
            for e in row.iter_mut() {
                *e = (*e - m).exp();
                s = s + *e;
            }
            for e in row.iter_mut() {
                *e = *e / s;
            }
        }
        let v = Tensor::new(xv.shape().to_vec(), out)?;
        let ng = self.ng(x);
        Ok(self.push(v, Op::Softmax { x }, ng))
    }

    /// Zero-mean, unit-variance rows (last axis), biased variance.
    pub fn normalize(&mut self, x: Var, eps: F) -> Var {
        let xv = self.value(x);
        let n = *xv.shape().last().expect("rank >= 1");
        let nf = F::lit(n as f64);
        let mut out = xv.data().to_vec();
        let mut inv_std = Vec::with_capacity(out.len() / n);
        for row in out.chunks_mut(n) {
            let mean = row.iter().copied().sum::<F>() / nf;
            let var = row.iter().map(|&e| (e - mean) * (e - mean)).sum::<F>() / nf;
            let is = F::one() / (var + eps).sqrt();
            for e in row.iter_mut() {
                *e = (*e - mean) * is;
            }
            inv_std.push(is);
        }
        let v = Tensor::new(xv.shape().to_vec(), out).expect("same shape");
        let ng = self.ng(x);
        self.push(v, Op::Normalize { x, inv_std }, ng)
    }

    /// Mean over the last axis, dropping it.
    pub fn mean_last(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = *xv.shape().last().expect("rank >= 1");
        let data: Vec<F> = xv
            .data()
            .chunks(n)
            .map(|r| r.iter().copied().sum::<F>() / F::lit(n as f64))
            .collect();
        let mut shape = xv.shape()[..xv.rank() - 1].to_vec();
        if shape.is_empty() {
            shape.push(1);
        }
        let v = Tensor::new(shape, data).expect("consistent");
        let ng = self.ng(x);
        self.push(v, Op::MeanLast { x }, ng)
    }

    /// Concatenate along the last axis; leading extents must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let lead = self.shape(parts[0])[..self.shape(parts[0]).len() - 1].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s[..s.len() - 1] != lead[..] {
                return Err(Error::shape("concat", self.shape(parts[0]), s));
            }
            widths.push(*s.last().expect("rank >= 1"));
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(Tensor::new(shape, data)?, Op::ConcatLast { parts: parts.to_vec() }, ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<F>();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum { x }, ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let s = xv.data().iter().copied().sum::<F>() / F::lit(xv.numel() as f64);
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Mean { x }, ng)
    }

    /// Real FFT along the last axis, unnormalized forward convention.
    pub fn rfft(&mut self, x: Var) -> Result<SpectrumVar> {
        let xv = self.value(x);
        let d = *xv.shape().last().expect("rank >= 1");
        if d < 2 {
            return Err(Error::config(format!("rfft needs an axis extent >= 2, got {d}")));
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().expect("rank >= 1") = rfft_len(d);
        let n: usize = shape.iter().product();
        let (mut re, mut im) = (vec![F::zero(); n], vec![F::zero(); n]);
        rfft_rows(xv.data(), d, &mut re, &mut im);
        let ng = self.ng(x);
        let re = self.push(Tensor::new(shape.clone(), re)?, Op::RfftRe { x }, ng);
        let im = self.push(Tensor::new(shape, im)?, Op::RfftIm { x }, ng);
        Ok(SpectrumVar { re, im })
    }

    /// Hard indicator `1(power > theta)` with `theta` broadcast onto `power`.
    pub fn threshold_mask(&mut self, power: Var, theta: Var, mode: MaskGradient) -> Result<Var> {
        let v = self.binary(power, theta, "threshold_mask", |p, t| {
            if p > t {
                F::one()
            } else {
                F::zero()
            }
        })?;
        if v.shape() != self.shape(power) {
            return Err(Error::shape("threshold_mask", self.shape(power), self.shape(theta)));
        }
        let ng = self.ng(theta) && matches!(mode, MaskGradient::StraightThrough { .. });
        Ok(self.push(v, Op::ThresholdMask { power, theta, mode }, ng))
    }

    /// Mean-reduced loss between `pred` and `target` of equal shape.
    ///
    /// `scale` carries one positive denominator per leading-axis sample and
    /// is required for [`LossKind::Mase`].
    pub fn loss(&mut self, pred: Var, target: Var, kind: LossKind, scale: Option<&[F]>) -> Result<Var> {
        let (sp, st) = (self.shape(pred), self.shape(target));
        if sp != st {
            return Err(Error::shape("loss", sp, st));
        }
        let scale = match kind {
            LossKind::Mase => {
                let s = scale.ok_or_else(|| Error::config("MASE loss needs in-sample scales"))?;
                if s.len() != sp[0] {
                    return Err(Error::shape("mase scale", sp, &[s.len()]));
                }
                Some(s.to_vec())
            }
            _ => None,
        };
        let p = self.value(pred).data();
        let y = self.value(target).data();
        let n = p.len();
        let value = match kind {
            LossKind::L1 => p.iter().zip(y).map(|(&a, &b)| (a - b).abs()).sum::<F>() / F::lit(n as f64),
            LossKind::Mse => p.iter().zip(y).map(|(&a, &b)| (a - b) * (a - b)).sum::<F>() / F::lit(n as f64),
            LossKind::SmoothL1 => {
                let beta = F::lit(SMOOTH_L1_BETA);
                let half = F::lit(0.5);
                p.iter()
                    .zip(y)
                    .map(|(&a, &b)| {
                        let d = (a - b).abs();
                        if d < beta {
                            half * d * d / beta
                        } else {
                            d - half * beta
                        }
                    })
                    .sum::<F>()
                    / F::lit(n as f64)
            }
            LossKind::Smape => {
                let eps = F::lit(SMAPE_EPS);
                F::lit(200.0)
                    * p.iter()
                        .zip(y)
                        .map(|(&a, &b)| {
                            let den = a.abs() + b.abs();
                            if den < eps {
                                F::zero()
                            } else {
                                (a - b).abs() / den
                            }
                        })
                        .sum::<F>()
                    / F::lit(n as f64)
            }
            LossKind::Mase => {
                let s = scale.as_ref().expect("checked above");
                let per = n / s.len();
                p.chunks(per)
                    .zip(y.chunks(per))
                    .zip(s)
                    .map(|((pc, yc), &sc)| {
                        pc.iter().zip(yc).map(|(&a, &b)| (a - b).abs()).sum::<F>()
                            / F::lit(per as f64)
                            / sc
                    })
                    .sum::<F>()
                    / F::lit(s.len() as f64)
            }
        };
        let ng = self.ng(pred) || self.ng(target);
        Ok(self.push(Tensor::scalar(value), Op::Loss { pred, target, kind, scale }, ng))
    }

    /// Gradients of the scalar `loss` with respect to every node that
    /// depends on a trainable leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape("backward (needs scalar)", self.shape(loss), &[1]));
        }
        let mut grads: Vec<Option<Vec<F>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let mut by_param = vec![None; self.store.map_or(0, |s| s.len())];
        for (pid, v) in self.param_vars.iter().enumerate() {
            if let Some(v) = v {
                if let Some(g) = &grads[v.0] {
                    by_param[pid] = Some(
                        Tensor::new(self.shape(*v).to_vec(), g.clone()).expect("shape matches"),
                    );
                }
            }
        }
        Ok(Gradients {
            nodes: grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            by_param,
        })
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<F>>], v: Var) -> Option<&'g mut Vec<F>> {
        if !self.ng(v) {
            return None;
        }
        let n = self.nodes[v.0].value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![F::zero(); n]))
    }

    fn acc_broadcast(&self, grads: &mut [Option<Vec<F>>], v: Var, out_shape: &[usize], g: impl Fn(usize) -> F) {
        let src_shape = self.shape(v).to_vec();
        let Some(dst) = self.acc(grads, v) else { return };
        match broadcast_map(out_shape, &src_shape) {
            None => {
                for (i, d) in dst.iter_mut().enumerate() {
                    *d = *d + g(i);
                }
            }
            Some(map) => {
                for (i, &j) in map.iter().enumerate() {
                    dst[j] = dst[j] + g(i);
                }
            }
        }
    }

    fn gather(&self, v: Var, out_shape: &[usize]) -> Vec<F> {
        match broadcast_map(out_shape, self.shape(v)) {
            None => self.value(v).data().to_vec(),
            Some(map) => map.iter().map(|&j| self.value(v).data()[j]).collect(),
        }
    }

    fn propagate(&self, i: usize, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul { a, b, dims } => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                // Borrow the two gradient slots one at a time.
                if self.ng(*a) {
                    let ga = self.acc(grads, *a).expect("needs grad");
                    matmul_backward(av, bv, g, Some(ga), None, dims);
                }
                if self.ng(*b) {
                    let gb = self.acc(grads, *b).expect("needs grad");
                    matmul_backward(av, bv, g, None, Some(gb), dims);
                }
            }
            Op::Permute { x, axes } => {
                if let Some(gx) = self.acc(grads, *x) {
                    let inv = inverse_permutation(axes);
                    let (_, back) = permute_data(g, out.shape(), &inv);
                    for (d, b) in gx.iter_mut().zip(back) {
                        *d = *d + b;
                    }
                }
            }
            Op::Reshape { x } => {
                if let Some(gx) = self.acc(grads, *x) {
                    for (d, &b) in gx.iter_mut().zip(g) {
                        *d = *d + b;
                    }
                }
            }
            Op::Add { a, b } => {
                self.acc_broadcast(grads, *a, out.shape(), |k| g[k]);
                self.acc_broadcast(grads, *b, out.shape(), |k| g[k]);
            }
            Op::Sub { a, b } => {
                self.acc_broadcast(grads, *a, out.shape(), |k| g[k]);
                self.acc_broadcast(grads, *b, out.shape(), |k| -g[k]);
            }
            Op::Mul { a, b } => {
                let av = self.gather(*a, out.shape());
                let bv = self.gather(*b, out.shape());
                self.acc_broadcast(grads, *a, out.shape(), |k| g[k] * bv[k]);
                self.acc_broadcast(grads, *b, out.shape(), |k| g[k] * av[k]);
            }
            Op::Scale { x, c } => {
                if let Some(gx) = self.acc(grads, *x) {
                    for (d, &b) in gx.iter_mut().zip(g) {
                        *d = *d + b * *c;
                    }
                }
            }
            Op::Offset { x } => {
                if let Some(gx) = self.acc(grads, *x) {
                    for (d, &b) in gx.iter_mut().zip(g) {
                        *d = *d + b;
                    }
                }
            }
            Op::Gelu { x } => {
                let xv = self.value(*x).data();
                if let Some(gx) = self.acc(grads, *x) {
                    for ((d, &b), &e) in gx.iter_mut().zip(g).zip(xv) {
                        *d = *d + b * F::lit(gelu_parts(e.as_f64()).1);
                    }
                }
            }
            Op::Sigmoid { x } => {
                if let Some(gx) = self.acc(grads, *x) {
                    for ((d, &b), &s) in gx.iter_mut().zip(g).zip(out.data()) {
                        *d = *d + b * s * (F::one() - s);
                    }
                }
            }
            Op::Magnitude { re, im } => {
                let rv = self.value(*re).data();
                let iv = self.value(*im).data();
                let m = out.data();
                let ratio = |num: F, mag: F| if mag > F::zero() { num / mag } else { F::zero() };
                if let Some(gr) = self.acc(grads, *re) {
                    for k in 0..gr.len() {
                        gr[k] = gr[k] + g[k] * ratio(rv[k], m[k]);
                    }
                }
                if let Some(gi) = self.acc(grads, *im) {
                    for k in 0..gi.len() {
                        gi[k] = gi[k] + g[k] * ratio(iv[k], m[k]);
                    }
                }
            }
            Op::Softmax { x } => {
                if let Some(gx) = self.acc(grads, *x) {
                    let n = *out.shape().last().expect("rank >= 1");
                    for ((gx_r, g_r), s_r) in gx.chunks_mut(n).zip(g.chunks(n)).zip(out.data().chunks(n)) {
                        let dot = g_r.iter().zip(s_r).map(|(&a, &b)| a * b).sum::<F>();
                        for k in 0..n {
                            gx_r[k] = gx_r[k] + s_r[k] * (g_r[k] - dot);
                        }
                    }
                }
            }
            Op::Normalize { x, inv_std } => {
                if let Some(gx) = self.acc(grads, *x) {
                    let n = *out.shape().last().expect("rank >= 1");
                    let nf = F::lit(n as f64);
                    for (r, ((gx_r, g_r), y_r)) in gx
                        .chunks_mut(n)
                        .zip(g.chunks(n))
                        .zip(out.data().chunks(n))
                        .enumerate()
                    {
                        let mg = g_r.iter().copied().sum::<F>() / nf;
                        let mgy = g_r.iter().zip(y_r).map(|(&a, &b)| a * b).sum::<F>() / nf;
                        for k in 0..n {
                            gx_r[k] = gx_r[k] + inv_std[r] * (g_r[k] - mg - y_r[k] * mgy);
                        }
                    }
                }
            }
            Op::MeanLast { x } => {
                if let Some(gx) = self.acc(grads, *x) {
                    let n = gx.len() / g.len();
                    let inv = F::one() / F::lit(n as f64);
                    for (r, chunk) in gx.chunks_mut(n).enumerate() {
                        for d in chunk {
                            *d = *d + g[r] * inv;
                        }
                    }
                }
            }
            Op::ConcatLast { parts } => {
                let total = *out.shape().last().expect("rank >= 1");
                let rows = out.numel() / total;
                let mut offset = 0;
                for &p in parts {
                    let w = *self.shape(p).last().expect("rank >= 1");
                    if let Some(gp) = self.acc(grads, p) {
                        for r in 0..rows {
                            for c in 0..w {
                                gp[r * w + c] = gp[r * w + c] + g[r * total + offset + c];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::Sum { x } => {
                if let Some(gx) = self.acc(grads, *x) {
                    for d in gx.iter_mut() {
                        *d = *d + g[0];
                    }
                }
            }
            Op::Mean { x } => {
                if let Some(gx) = self.acc(grads, *x) {
                    let s = g[0] / F::lit(gx.len() as f64);
                    for d in gx.iter_mut() {
                        *d = *d + s;
                    }
                }
            }
            Op::RfftRe { x } | Op::RfftIm { x } => {
                let d = *self.shape(*x).last().expect("rank >= 1");
                let is_re = matches!(node.op, Op::RfftRe { .. });
                if let Some(gx) = self.acc(grads, *x) {
                    if is_re {
                        rfft_adjoint_rows(Some(g), None, d, gx);
                    } else {
                        rfft_adjoint_rows(None, Some(g), d, gx);
                    }
                }
            }
            Op::ThresholdMask { power, theta, mode } => {
                if let MaskGradient::StraightThrough { temperature } = mode {
                    let tau = *temperature;
                    let pv = self.value(*power).data().to_vec();
                    let tv = self.gather(*theta, out.shape());
                    self.acc_broadcast(grads, *theta, out.shape(), |k| {
                        let s = sigmoid((pv[k] - tv[k]).as_f64() / tau);
                        g[k] * F::lit(-s * (1.0 - s) / tau)
                    });
                }
            }
            Op::Loss { pred, target, kind, scale } => {
                let p = self.value(*pred).data();
                let y = self.value(*target).data();
                let n = p.len();
                let nf = F::lit(n as f64);
                let (dp, dy): (Vec<F>, Vec<F>) = match kind {
                    LossKind::L1 => p
                        .iter()
                        .zip(y)
                        .map(|(&a, &b)| {
                            let s = sign(a - b) / nf;
                            (s, -s)
                        })
                        .unzip(),
                    LossKind::Mse => p
                        .iter()
                        .zip(y)
                        .map(|(&a, &b)| {
                            let s = F::lit(2.0) * (a - b) / nf;
                            (s, -s)
                        })
                        .unzip(),
                    LossKind::SmoothL1 => {
                        let beta = F::lit(SMOOTH_L1_BETA);
                        p.iter()
                            .zip(y)
                            .map(|(&a, &b)| {
                                let d = a - b;
                                let s = if d.abs() < beta { d / beta } else { sign(d) } / nf;
                                (s, -s)
                            })
                            .unzip()
                    }
                    LossKind::Smape => {
                        let eps = F::lit(SMAPE_EPS);
                        let c = F::lit(200.0) / nf;
                        p.iter()
                            .zip(y)
                            .map(|(&a, &b)| {
                                let den = a.abs() + b.abs();
                                if den < eps {
                                    return (F::zero(), F::zero());
                                }
                                let d = a - b;
                                let q = d.abs() / (den * den);
                                (
                                    c * (sign(d) / den - q * sign(a)),
                                    c * (-sign(d) / den - q * sign(b)),
                                )
                            })
                            .unzip()
                    }
                    LossKind::Mase => {
                        let s = scale.as_ref().expect("validated at construction");
                        let per = n / s.len();
                        let bf = F::lit(s.len() as f64);
                        p.iter()
                            .zip(y)
                            .enumerate()
                            .map(|(k, (&a, &b))| {
                                let v = sign(a - b) / (bf * F::lit(per as f64) * s[k / per]);
                                (v, -v)
                            })
                            .unzip()
                    }
                };
                if let Some(gp) = self.acc(grads, *pred) {
                    for (d, v) in gp.iter_mut().zip(&dp) {
                        *d = *d + g[0] * *v;
                    }
                }
                if let Some(gy) = self.acc(grads, *target) {
                    for (d, v) in gy.iter_mut().zip(&dy) {
                        *d = *d + g[0] * *v;
                    }
                }
            }
        }
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients<F> {
    nodes: Vec<Option<Vec<F>>>,
    shapes: Vec<Vec<usize>>,
    by_param: Vec<Option<Tensor<F>>>,
}

impl<F: Real> Gradients<F> {
    /// Gradient of a registry parameter; `None` means exactly zero (frozen
    /// or unused).
    pub fn param(&self, id: ParamId) -> Option<&Tensor<F>> {
        self.by_param.get(id.0).and_then(Option::as_ref)
    }

    /// Per-parameter gradients indexed by registry position.
    pub fn params(&self) -> &[Option<Tensor<F>>] {
        &self.by_param
    }

    pub fn into_params(self) -> Vec<Option<Tensor<F>>> {
        self.by_param
    }

    /// Gradient of an arbitrary node, zero-filled when it received none.
    pub fn of(&self, v: Var) -> Tensor<F> {
        let shape = self.shapes[v.0].clone();
        match &self.nodes[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("shape matches"),
            None => Tensor::zeros(&shape),
        }
    }
}
