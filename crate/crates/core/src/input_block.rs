//! Channel-as-token embedding followed by self-attention (teacher input)
//! and cross-attention against a compact word-embedding dictionary
//! (student input).

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{mha, Attention};
use crate::numerics::params::{glorot, normal, ParamId, ParamStore};
use crate::numerics::rng::{rng_for, stream};
use crate::numerics::{Real, Tape, Tensor, Var};

const EMB_MAGIC: &[u8; 7] = b"TLLMEMB";

/// Where the dictionary rows come from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DictionarySource {
    /// Seeded random orthonormal rows.
    #[default]
    Synthetic,
    /// Principal directions of an embedding matrix stored in the binary
    /// embedding format.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub heads: usize,
    pub dict_size: usize,
    pub dictionary: DictionarySource,
}

impl Default for InputConfig {
    fn default() -> Self {
        InputConfig {
            heads: 4,
            dict_size: 500,
            dictionary: DictionarySource::Synthetic,
        }
    }
}

/// Parameter handles of the input block.
#[derive(Debug, Clone)]
pub struct InputBlock {
    pub embed: ParamId,
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub c_q: ParamId,
    pub c_k: ParamId,
    pub c_v: ParamId,
    pub dictionary: ParamId,
    pub heads: usize,
    pub d_model: usize,
    pub lookback: usize,
}

/// The two branch inputs plus the attention maps that produced them.
#[derive(Debug, Clone, Copy)]
pub struct BranchInputs {
    pub e0: Var,
    pub e1: Var,
    pub z1: Var,
    pub self_weights: Var,
    pub cross_weights: Var,
}

impl InputBlock {
    /// Register the block's parameters. The dictionary is frozen.
    pub fn register<F: Real>(
        store: &mut ParamStore<F>,
        lookback: usize,
        d_model: usize,
        heads: usize,
        dictionary: &Tensor<f64>,
        seed: u64,
    ) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(Error::config(format!(
                "d_model {d_model} is not divisible by {heads} input heads"
            )));
        }
        if dictionary.rank() != 2 || dictionary.shape()[1] != d_model {
            return Err(Error::shape("dictionary", dictionary.shape(), &[0, d_model]));
        }
        let mut rng = rng_for(seed, stream::INPUT_BLOCK);
        let sq = |store: &mut ParamStore<F>, name: &str, rng: &mut crate::numerics::rng::Rng| {
            store.add(format!("input.{name}"), glorot(rng, d_model, d_model), true)
        };
        let embed = store.add("input.embed", glorot(&mut rng, lookback, d_model), true);
        let w_q = sq(store, "self.w_q", &mut rng);
        let w_k = sq(store, "self.w_k", &mut rng);
        let w_v = sq(store, "self.w_v", &mut rng);
        let c_q = sq(store, "cross.w_q", &mut rng);
        let c_k = sq(store, "cross.w_k", &mut rng);
        let c_v = sq(store, "cross.w_v", &mut rng);
        let dictionary = store.add("input.dictionary", dictionary.cast(), false);
        Ok(InputBlock {
            embed,
            w_q,
            w_k,
            w_v,
            c_q,
            c_k,
            c_v,
            dictionary,
            heads,
            d_model,
            lookback,
        })
    }

    /// `x` is `[B, L, C]`.
    pub fn forward<F: Real>(&self, tape: &mut Tape<'_, F>, x: Var) -> Result<BranchInputs> {
        let w = tape.param(self.embed);
        let e0 = embed(tape, x, w)?;
        let (wq, wk, wv) = (tape.param(self.w_q), tape.param(self.w_k), tape.param(self.w_v));
        let sa = self_attend(tape, e0, [wq, wk, wv], self.heads)?;
        let dict = tape.param(self.dictionary);
        let (cq, ck, cv) = (tape.param(self.c_q), tape.param(self.c_k), tape.param(self.c_v));
        let ca = cross_attend(tape, sa.out, dict, [cq, ck, cv], self.heads)?;
        Ok(BranchInputs {
            e0,
            e1: sa.out,
            z1: ca.out,
            self_weights: sa.weights,
            cross_weights: ca.weights,
        })
    }
}

/// Channel-shared, bias-free embedding of `[.., L, C]` into `[.., C, d]`.
pub fn embed<F: Real>(tape: &mut Tape<'_, F>, x: Var, w: Var) -> Result<Var> {
    let xs = tape.shape(x);
    let l = xs[xs.len() - 2];
    if tape.shape(w)[0] != l {
        return Err(Error::config(format!(
            "input length {l} does not match the embedding's lookback {}",
            tape.shape(w)[0]
        )));
    }
    let xt = tape.transpose(x)?;
    tape.matmul(xt, w)
}

fn attention_scale<F: Real>(d_model: usize) -> F {
    F::one() / F::lit(d_model as f64).sqrt()
}

/// `MHA(E0 Wq, E0 Wk, E0 Wv)` with the `1/sqrt(d_model)` scale.
pub fn self_attend<F: Real>(tape: &mut Tape<'_, F>, e0: Var, w: [Var; 3], heads: usize) -> Result<Attention> {
    let d = *tape.shape(e0).last().expect("rank >= 1");
    let q = tape.matmul(e0, w[0])?;
    let k = tape.matmul(e0, w[1])?;
    let v = tape.matmul(e0, w[2])?;
    mha(tape, q, k, v, heads, attention_scale(d), false)
}

/// `MHA(E1 W'q, D W'k, D W'v)`; one output token per channel.
pub fn cross_attend<F: Real>(
    tape: &mut Tape<'_, F>,
    e1: Var,
    dictionary: Var,
    w: [Var; 3],
    heads: usize,
) -> Result<Attention> {
    if tape.shape(dictionary)[0] == 0 {
        return Err(Error::config("empty dictionary"));
    }
    let d = *tape.shape(e1).last().expect("rank >= 1");
    let q = tape.matmul(e1, w[0])?;
    let k = tape.matmul(dictionary, w[1])?;
    let v = tape.matmul(dictionary, w[2])?;
    mha(tape, q, k, v, heads, attention_scale(d), false)
}

/// Build the `P x d_model` dictionary.
pub fn build_dictionary(source: &DictionarySource, p: usize, d_model: usize, seed: u64) -> Result<Tensor<f64>> {
    match source {
        DictionarySource::Synthetic => {
            let mut rng = rng_for(seed, stream::DICTIONARY);
            synthetic_dictionary(p, d_model, &mut rng)
        }
        DictionarySource::File(path) => {
            let m = read_embedding_file(path)?;
            if m.shape()[1] != d_model {
                return Err(Error::config(format!(
                    "embedding file {} has width {}, model width is {d_model}",
                    path.display(),
                    m.shape()[1]
                )));
            }
            pca_dictionary(&m, p)
        }
    }
}

/// `p` random Gaussian rows made orthonormal.
pub fn synthetic_dictionary(p: usize, d: usize, rng: &mut impl Rng) -> Result<Tensor<f64>> {
    if p == 0 {
        return Err(Error::config("empty dictionary"));
    }
    if p > d {
        return Err(Error::config(format!(
            "cannot build {p} orthonormal rows in {d} dimensions"
        )));
    }
    let raw: Tensor<f64> = normal(rng, &[d, p], 1.0);
    let q = DMatrix::from_row_slice(d, p, raw.data()).qr().q();
    let mut data = Vec::with_capacity(p * d);
    for j in 0..p {
        data.extend(q.column(j).iter().copied());
    }
    Tensor::new(vec![p, d], data)
}

/// Top-`p` principal directions of the mean-centred rows of `m`, one per
/// row, in decreasing order of explained variance. Each direction's
/// largest-magnitude entry is made positive.
pub fn pca_dictionary(m: &Tensor<f64>, p: usize) -> Result<Tensor<f64>> {
    let (n, d) = (m.shape()[0], m.shape()[1]);
    if p == 0 {
        return Err(Error::config("empty dictionary"));
    }
    if p > n.min(d) {
        return Err(Error::config(format!(
            "dictionary size {p} exceeds min(rows {n}, width {d})"
        )));
    }
    let mut x = DMatrix::from_row_slice(n, d, m.data());
    for mut col in x.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    let cov = x.transpose() * &x;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut data = Vec::with_capacity(p * d);
    for &j in order.iter().take(p) {
        let v = eig.eigenvectors.column(j);
        let pivot = v.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        data.extend(v.iter().map(|&e| e * sign));
    }
    Tensor::new(vec![p, d], data)
}

pub fn write_embedding_file(path: &Path, m: &Tensor<f64>) -> Result<()> {
    if m.rank() != 2 {
        return Err(Error::shape("embedding matrix", m.shape(), &[0, 0]));
    }
    let mut out = Vec::with_capacity(15 + 4 * m.numel());
    out.extend_from_slice(EMB_MAGIC);
    out.extend_from_slice(&(m.shape()[0] as u32).to_le_bytes());
    out.extend_from_slice(&(m.shape()[1] as u32).to_le_bytes());
    for &v in m.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_embedding_file(path: &Path) -> Result<Tensor<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::config(format!("{}: {msg}", path.display()));
    if bytes.len() < 15 || &bytes[..7] != EMB_MAGIC {
        return Err(bad("not an embedding file"));
    }
    let rows = u32::from_le_bytes(bytes[7..11].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(bytes[11..15].try_into().expect("4 bytes")) as usize;
    let body = &bytes[15..];
    if rows == 0 || cols == 0 || body.len() != rows * cols * 4 {
        return Err(bad("truncated or empty embedding matrix"));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Tensor::new(vec![rows, cols], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.bin");
        let m = Tensor::from_rows(&[vec![1.0, -2.5, 0.25], vec![4.0, 5.0, 6.0]]).unwrap();
        write_embedding_file(&path, &m).unwrap();
        assert_eq!(read_embedding_file(&path).unwrap(), m);
        fs::write(&path, b"garbage").unwrap();
        assert!(read_embedding_file(&path).is_err());
    }
}
