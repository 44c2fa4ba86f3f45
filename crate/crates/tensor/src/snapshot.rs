//! Parameter checkpoint format.
//!
//! ```text
//! magic    8 bytes  "SMKSNAP\0"
//! version  u32      1
//! count    u32      number of entries
//! manifest count × { id_len u32, id utf-8 bytes, dtype u8 (1 = f32, 2 = f64), dims 4 × u64 }
//! payload  for each entry in manifest order: numel values, little-endian, of its dtype
//! ```
//!
//! All integers are little-endian. Values are written in the build's native
//! precision and converted on load.

use std::io::{Read, Write};
use std::path::Path;

use crate::{ParamSet, Real, Result, Shape, Tensor, TensorError};

const MAGIC: &[u8; 8] = b"SMKSNAP\0";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 1,
    F64 = 2,
}

impl DType {
    pub const NATIVE: DType = if std::mem::size_of::<Real>() == 4 {
        DType::F32
    } else {
        DType::F64
    };

    fn from_byte(b: u8) -> Result<Self> {
        match b {
            1 => Ok(DType::F32),
            2 => Ok(DType::F64),
            other => Err(TensorError::Snapshot(format!("unknown dtype tag {other}"))),
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// One manifest entry.
#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub id: String,
    pub dtype: DType,
    pub shape: Shape,
}

pub fn encode<'a>(entries: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Vec<u8> {
    let entries: Vec<_> = entries.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (id, t) in &entries {
        out.extend_from_slice(&(id.len() as u32).to_le_bytes());
        out.extend_from_slice(id.as_bytes());
        out.push(DType::NATIVE as u8);
        for d in t.shape().dims() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
    }
    for (_, t) in &entries {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| TensorError::Snapshot("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(Entry, Tensor)>> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    if cur.take(8)? != MAGIC {
        return Err(TensorError::Snapshot("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(TensorError::Snapshot(format!("unsupported version {version}")));
    }
    let count = cur.u32()? as usize;
    let mut manifest = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = cur.u32()? as usize;
        let id = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| TensorError::Snapshot("parameter id is not utf-8".into()))?
            .to_string();
        let dtype = DType::from_byte(cur.take(1)?[0])?;
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = usize::try_from(cur.u64()?)
                .map_err(|_| TensorError::Snapshot("dimension overflow".into()))?;
        }
        manifest.push(Entry {
            id,
            dtype,
            shape: Shape::from(dims),
        });
    }
    let mut out = Vec::with_capacity(manifest.len());
    for e in manifest {
        let n = e.shape.numel();
        let raw = cur.take(n.checked_mul(e.dtype.width()).ok_or_else(|| {
            TensorError::Snapshot("payload size overflow".into())
        })?)?;
        let data: Vec<Real> = match e.dtype {
            DType::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as Real)
                .collect(),
            DType::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()) as Real)
                .collect(),
        };
        let t = Tensor::from_vec(e.shape, data)?;
        out.push((e, t));
    }
    if cur.pos != bytes.len() {
        return Err(TensorError::Snapshot("trailing bytes".into()));
    }
    Ok(out)
}

pub fn save(params: &ParamSet, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode(params.iter().map(|p| (p.id.as_str(), &p.value)));
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

/// Loads a snapshot into an existing parameter set. Every parameter must be
/// present with a matching shape and no extra entries are allowed.
pub fn load_into(params: &mut ParamSet, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let entries = decode(&bytes)?;
    if entries.len() != params.len() {
        return Err(TensorError::Snapshot(format!(
            "snapshot has {} entries, model has {}",
            entries.len(),
            params.len()
        )));
    }
    for (e, t) in entries {
        params.set_value(&e.id, t)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_documented_layout() {
        let t = Tensor::from_vec([1, 1, 1, 2], vec![1.0, -2.0]).unwrap();
        let bytes = encode([("w", &t)]);
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &1u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &1u32.to_le_bytes());
        assert_eq!(bytes[20], b'w');
        assert_eq!(bytes[21], DType::NATIVE as u8);
        let payload = &bytes[22 + 32..];
        assert_eq!(payload.len(), 2 * std::mem::size_of::<Real>());
        assert_eq!(&payload[..std::mem::size_of::<Real>()], &(1.0 as Real).to_le_bytes());
    }

    #[test]
    fn truncated_rejected() {
        let t = Tensor::ones([1, 2, 2, 2]);
        let bytes = encode([("w", &t)]);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(values in proptest::collection::vec(-1e6f64..1e6, 1..40), name in "[a-z_.0-9]{1,12}") {
            let n = values.len();
            let t = Tensor::from_vec([1, 1, 1, n], values.iter().map(|&v| v as Real).collect()).unwrap();
            let back = decode(&encode([(name.as_str(), &t)])).unwrap();
            prop_assert_eq!(back.len(), 1);
            prop_assert_eq!(&back[0].0.id, &name);
            prop_assert_eq!(&back[0].1, &t);
        }
    }
}
