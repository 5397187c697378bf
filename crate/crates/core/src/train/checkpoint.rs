//! Binary checkpoints, little-endian throughout:
//!
//! ```text
//! "DRC1"  u32 version  u32 count  count × tensor
//! u32 count  count × tensor          (optimizer moments, named m.<p> / v.<p>)
//! u64 step  u64 seed
//! tensor = u32 name_len, name (UTF-8), u8 ndim, ndim × u64 dims, f32 payload
//! ```
//!
//! The architecture travels as the first tensor, `meta.arch`: its JSON text
//! with one byte per element.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use super::adam::Moment;
use crate::error::{Error, Result};
use crate::model::{ArchConfig, DracoWeights};
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"DRC1";
pub const VERSION: u32 = 1;
const ARCH_TENSOR: &str = "meta.arch";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub weights: DracoWeights<f32>,
    /// Adam moments keyed by parameter name; empty for inference-only files.
    pub moments: IndexMap<String, Moment<f32>>,
    pub step: u64,
    pub seed: u64,
}

impl Checkpoint {
    pub fn arch(&self) -> &ArchConfig {
        self.weights.arch()
    }
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(4);
    for d in t.shape().dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn arch_tensor(arch: &ArchConfig) -> Result<Tensor<f32>> {
    let json = serde_json::to_vec(arch)?;
    let n = json.len();
    Tensor::new(Shape::new(1, 1, 1, n), json.into_iter().map(f32::from).collect())
}

/// Serialize to bytes.
pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&((ckpt.weights.len() + 1) as u32).to_le_bytes());
    put_tensor(&mut out, ARCH_TENSOR, &arch_tensor(ckpt.arch())?);
    for (name, t) in ckpt.weights.iter() {
        put_tensor(&mut out, name, t);
    }
    out.extend_from_slice(&((2 * ckpt.moments.len()) as u32).to_le_bytes());
    for (name, mo) in &ckpt.moments {
        put_tensor(&mut out, &format!("m.{name}"), &mo.m);
        put_tensor(&mut out, &format!("v.{name}"), &mo.v);
    }
    out.extend_from_slice(&ckpt.step.to_le_bytes());
    out.extend_from_slice(&ckpt.seed.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated while reading {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn tensor(&mut self) -> Result<(String, Tensor<f32>)> {
        let at = self.pos as u64;
        let len = self.u32("name length")? as usize;
        let name = std::str::from_utf8(self.take(len, "tensor name")?)
            .map_err(|_| Error::format(at + 4, "tensor name is not UTF-8"))?
            .to_string();
        let ndim_at = self.pos as u64;
        let ndim = self.u8("ndim")? as usize;
        if !(1..=4).contains(&ndim) {
            return Err(Error::format(ndim_at, format!("tensor {name}: ndim {ndim} not in 1..=4")));
        }
        let mut dims = [1usize; 4];
        for d in &mut dims[4 - ndim..] {
            *d = usize::try_from(self.u64("dimension")?)
                .map_err(|_| Error::format(ndim_at, format!("tensor {name}: dimension overflows")))?;
        }
        let shape = Shape::from_dims(dims);
        let bytes = shape
            .len()
            .checked_mul(4)
            .ok_or_else(|| Error::format(ndim_at, format!("tensor {name}: size overflows")))?;
        let payload = self.take(bytes, "tensor payload")?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok((name, Tensor::new(shape, data)?))
    }
}

/// Parse bytes; nothing is returned unless the whole file is valid.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format(0, "bad magic, expected DRC1"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let count_at = r.pos as u64;
    let count = r.u32("tensor count")? as usize;
    if count == 0 {
        return Err(Error::format(count_at, "no tensors"));
    }
    let (first, meta) = r.tensor()?;
    if first != ARCH_TENSOR {
        return Err(Error::format(count_at + 4, format!("expected {ARCH_TENSOR}, found {first}")));
    }
    let json: Vec<u8> = meta
        .data()
        .iter()
        .map(|&v| {
            if (0.0..=255.0).contains(&v) && v.fract() == 0.0 {
                Ok(v as u8)
            } else {
                Err(Error::format(count_at + 4, "architecture record is not bytes"))
            }
        })
        .collect::<Result<_>>()?;
    let arch: ArchConfig = serde_json::from_slice(&json)
        .map_err(|e| Error::format(count_at + 4, format!("architecture record: {e}")))?;
    let mut named = Vec::with_capacity(count - 1);
    for _ in 1..count {
        named.push(r.tensor()?);
    }
    let mcount_at = r.pos as u64;
    let mcount = r.u32("moment count")? as usize;
    if mcount % 2 != 0 {
        return Err(Error::format(mcount_at, "moment count must be even"));
    }
    let mut moments = IndexMap::with_capacity(mcount / 2);
    for _ in 0..mcount / 2 {
        let at = r.pos as u64;
        let (mname, m) = r.tensor()?;
        let (vname, v) = r.tensor()?;
        match (mname.strip_prefix("m."), vname.strip_prefix("v.")) {
            (Some(a), Some(b)) if a == b && m.shape() == v.shape() => {
                moments.insert(a.to_string(), Moment { m, v });
            }
            _ => {
                return Err(Error::format(
                    at,
                    format!("moment records {mname} / {vname} do not pair up"),
                ))
            }
        }
    }
    let step = r.u64("step")?;
    let seed = r.u64("seed")?;
    if r.pos != bytes.len() {
        return Err(Error::format(r.pos as u64, "trailing bytes after checkpoint"));
    }
    let weights = DracoWeights::from_named(&arch, named)?;
    for (name, mo) in &moments {
        let p = weights.get(name).map_err(|_| {
            Error::format(mcount_at, format!("moments for unknown parameter {name}"))
        })?;
        if p.shape() != mo.m.shape() {
            return Err(Error::format(mcount_at, format!("moment shape mismatch for {name}")));
        }
    }
    Ok(Checkpoint {
        weights,
        moments,
        step,
        seed,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(ckpt)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        Error::Format { offset, message } => Error::Format {
            offset,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}
