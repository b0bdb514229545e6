//! Binary tensor container used for training checkpoints, exported
//! student artifacts and backbone weights.
//!
//! Layout (little-endian): magic `TLLMCKPT`, `u32` version, `u64` tensor
//! count, then per tensor `u16` name length, UTF-8 name, `u8` dtype,
//! `u8` rank, `u32` extents, raw data.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::numerics::{DType, ParamStore, Real, Tensor};

const MAGIC: &[u8; 8] = b"TLLMCKPT";
pub const VERSION: u32 = 1;

/// Payload of one entry.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
            TensorData::U8(_) => DType::U8,
        }
    }

    fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
    /// Only recorded in the manifest.
    pub trainable: bool,
}

impl Entry {
    pub fn from_tensor<F: Real>(name: impl Into<String>, t: &Tensor<F>, trainable: bool) -> Self {
        let data = match F::DTYPE {
            DType::F32 => TensorData::F32(t.data().iter().map(|x| x.as_f64() as f32).collect()),
            _ => TensorData::F64(t.to_f64_vec()),
        };
        Entry {
            name: name.into(),
            shape: t.shape().to_vec(),
            data,
            trainable,
        }
    }

    pub fn f64s(name: impl Into<String>, values: &[f64]) -> Self {
        Entry {
            name: name.into(),
            shape: vec![values.len()],
            data: TensorData::F64(values.to_vec()),
            trainable: false,
        }
    }

    pub fn bytes(name: impl Into<String>, bytes: &[u8]) -> Self {
        Entry {
            name: name.into(),
            shape: vec![bytes.len()],
            data: TensorData::U8(bytes.to_vec()),
            trainable: false,
        }
    }

    /// Convert to a floating tensor of any precision.
    pub fn to_tensor<F: Real>(&self) -> Result<Tensor<F>> {
        let data: Vec<F> = match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| F::lit(x as f64)).collect(),
            TensorData::F64(v) => v.iter().map(|&x| F::lit(x)).collect(),
            TensorData::U8(_) => {
                return Err(Error::Checkpoint(format!("{} holds bytes, not numbers", self.name)))
            }
        };
        Tensor::new(self.shape.clone(), data)
    }

    pub fn as_bytes(&self) -> Result<&[u8]> {
        match &self.data {
            TensorData::U8(v) => Ok(v),
            _ => Err(Error::Checkpoint(format!("{} is not a byte tensor", self.name))),
        }
    }
}

/// Entries of a parameter store, in registry order.
pub fn store_entries<F: Real>(store: &ParamStore<F>, prefix: &str) -> Vec<Entry> {
    store
        .iter()
        .map(|(_, p)| Entry::from_tensor(format!("{prefix}{}", p.name), &p.value, p.trainable))
        .collect()
}

pub fn encode(entries: &[Entry]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for e in entries {
        let name = e.name.as_bytes();
        if name.len() > u16::MAX as usize {
            return Err(Error::Checkpoint(format!("tensor name too long: {}", e.name)));
        }
        if e.shape.iter().product::<usize>() != e.data.len() || e.shape.len() > u8::MAX as usize {
            return Err(Error::Checkpoint(format!("inconsistent shape for {}", e.name)));
        }
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(e.data.dtype().code());
        out.push(e.shape.len() as u8);
        for &d in &e.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match &e.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U8(v) => out.extend_from_slice(v),
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Entry>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u64()?;
    let mut entries = Vec::new();
    for _ in 0..count {
        let n = r.u16()? as usize;
        let name = String::from_utf8(r.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let code = r.u8()?;
        let dtype = DType::from_code(code)
            .ok_or_else(|| Error::Checkpoint(format!("unknown dtype {code} for {name}")))?;
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let raw = r.take(len * dtype.size())?;
        let data = match dtype {
            DType::F32 => TensorData::F32(raw.chunks_exact(4).map(f32::read_le).collect()),
            DType::F64 => TensorData::F64(raw.chunks_exact(8).map(f64::read_le).collect()),
            DType::U8 => TensorData::U8(raw.to_vec()),
        };
        entries.push(Entry {
            name,
            shape,
            data,
            trainable: false,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
    }
    Ok(entries)
}

/// Plain-text listing: one `name<TAB>shape<TAB>trainable` line per tensor.
pub fn manifest(entries: &[Entry]) -> String {
    let mut s = String::from("name\tshape\ttrainable\n");
    for e in entries {
        let shape: Vec<String> = e.shape.iter().map(usize::to_string).collect();
        s.push_str(&format!("{}\t[{}]\t{}\n", e.name, shape.join(","), e.trainable));
    }
    s
}

/// `foo.tllm` -> `foo.manifest.txt`.
pub fn manifest_path(path: &Path) -> PathBuf {
    path.with_extension("manifest.txt")
}

/// Write the container and its manifest next to it.
pub fn save(path: &Path, entries: &[Entry]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode(entries)?).map_err(|e| Error::io(path, e))?;
    let m = manifest_path(path);
    fs::write(&m, manifest(entries)).map_err(|e| Error::io(&m, e))
}

pub fn load(path: &Path) -> Result<Vec<Entry>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

/// Lookup helper over decoded entries.
pub struct Entries(pub Vec<Entry>);

impl Entries {
    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.0.iter().find(|e| e.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Entry> {
        self.get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    }

    pub fn text(&self, name: &str) -> Result<String> {
        String::from_utf8(self.require(name)?.as_bytes()?.to_vec())
            .map_err(|_| Error::Checkpoint(format!("{name} is not UTF-8")))
    }

    pub fn flag(&self, name: &str) -> bool {
        self.get(name)
            .and_then(|e| e.as_bytes().ok())
            .is_some_and(|b| b.first() == Some(&1))
    }

    /// Overwrite every store parameter from `{prefix}{name}`.
    pub fn fill_store<F: Real>(&self, store: &mut ParamStore<F>, prefix: &str) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = format!("{prefix}{}", store.get(id).name);
            let t = self.require(&name)?.to_tensor::<F>()?;
            store
                .set(id, t)
                .map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        }
        Ok(())
    }
}
