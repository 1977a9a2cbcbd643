//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "D2MCKPT\0"
//! version    u32      = 1
//! step       u64
//! n_meta     u32      then n_meta × (key: str, value: str)
//! n_tensors  u32      then n_tensors × tensor
//! has_opt    u8       1 if Adam moments follow
//! moments             for each tensor in order: m (f64 × numel), v (f64 × numel)
//!
//! str    = u32 byte length + UTF-8 bytes
//! tensor = name: str, frozen: u8, rank: u32, dims: u64 × rank, data: f64 × numel
//! ```
//!
//! Nothing time-dependent is stored, so identical training runs produce
//! identical files.

use std::io::{Read, Write};

use super::array::Tensor;
use super::param::ParamStore;
use super::TensorError;

const MAGIC: &[u8; 8] = b"D2MCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    /// Free-form key/value metadata (model configs, vocabularies as JSON).
    pub meta: Vec<(String, String)>,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_bytes(&self, with_optimizer: bool) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        let p = &self.params;
        out.extend_from_slice(&(p.len() as u32).to_le_bytes());
        for i in 0..p.len() {
            put_str(&mut out, &p.names()[i]);
            out.push(p.is_frozen(i) as u8);
            let t = p.value(i);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            put_f64s(&mut out, t.data());
        }
        out.push(with_optimizer as u8);
        if with_optimizer {
            for i in 0..p.len() {
                put_f64s(&mut out, p.first_moment[i].data());
                put_f64s(&mut out, p.second_moment[i].data());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TensorError> {
        let mut r = Cursor { b: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(TensorError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(TensorError::Checkpoint(format!("unsupported version {version}")));
        }
        let step = r.u64()?;
        let n_meta = r.u32()? as usize;
        let mut meta = Vec::with_capacity(n_meta);
        for _ in 0..n_meta {
            meta.push((r.string()?, r.string()?));
        }
        let n = r.u32()? as usize;
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            let name = r.string()?;
            let frozen = r.take(1)?[0] != 0;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let numel: usize = shape.iter().product();
            let data = r.f64s(numel)?;
            entries.push((name, frozen, Tensor::new(&shape, data)?));
        }
        let has_opt = r.take(1)?[0] != 0;
        let mut params = ParamStore::new();
        for (name, frozen, t) in entries {
            let moments = if has_opt {
                let m = Tensor::new(t.shape(), r.f64s(t.numel())?)?;
                let v = Tensor::new(t.shape(), r.f64s(t.numel())?)?;
                Some((m, v))
            } else {
                None
            };
            params.insert_with_state(&name, t, frozen, moments)?;
        }
        if r.pos != bytes.len() {
            return Err(TensorError::Checkpoint("trailing bytes".into()));
        }
        Ok(Checkpoint { step, meta, params })
    }

    pub fn write(&self, mut w: impl Write, with_optimizer: bool) -> std::io::Result<()> {
        w.write_all(&self.to_bytes(with_optimizer))
    }

    pub fn read(mut r: impl Read) -> Result<Self, TensorError> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)
            .map_err(|e| TensorError::Checkpoint(e.to_string()))?;
        Self::from_bytes(&buf)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_f64s(out: &mut Vec<u8>, data: &[f64]) {
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Cursor<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TensorError> {
        if self.pos + n > self.b.len() {
            return Err(TensorError::Checkpoint("truncated".into()));
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, TensorError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, TensorError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, TensorError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| TensorError::Checkpoint("invalid UTF-8".into()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, TensorError> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| TensorError::Checkpoint("size overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_and_without_optimizer() {
        let mut params = ParamStore::new();
        params.init_const("a", 2, 3, 0.5).unwrap();
        params.init_const("b", 1, 1, -2.0).unwrap();
        params.first_moment[0].data_mut()[1] = 0.125;
        let ck = Checkpoint {
            step: 42,
            meta: vec![("kind".into(), "test".into())],
            params,
        };
        let back = Checkpoint::from_bytes(&ck.to_bytes(true)).unwrap();
        assert_eq!(back, ck);
        let light = Checkpoint::from_bytes(&ck.to_bytes(false)).unwrap();
        assert_eq!(light.params.value(0), ck.params.value(0));
        assert_eq!(light.params.first_moment[0].data()[1], 0.0);
        assert_eq!(light.meta("kind"), Some("test"));
    }

    #[test]
    fn corrupt_input_is_rejected() {
        assert!(Checkpoint::from_bytes(b"nope").is_err());
        let ck = Checkpoint {
            step: 0,
            meta: vec![],
            params: ParamStore::new(),
        };
        let mut b = ck.to_bytes(false);
        b.push(0);
        assert!(Checkpoint::from_bytes(&b).is_err());
    }
}
