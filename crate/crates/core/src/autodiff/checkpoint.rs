//! Flat binary parameter checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic    8 bytes  "CGNNPARM"
//! version  u32      1
//! count    u32      number of arrays
//! repeated count times:
//!   name_len u32, name (UTF-8, name_len bytes)
//!   rows u32, cols u32
//!   decay u8        1 if L2 decay applies
//!   values          rows * cols f64, row-major
//! ```
//!
//! Values are always stored as f64 regardless of the runtime scalar.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::autodiff::params::ParamStore;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"CGNNPARM";
pub const VERSION: u32 = 1;

pub fn encode<T: Scalar>(store: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + store.numel() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for p in store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(p.value.cols() as u32).to_le_bytes());
        out.push(u8::from(p.decay));
        for v in p.value.as_slice() {
            out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len() < n {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.take(4)?.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<ParamStore<T>> {
    let mut r = Reader { buf: bytes };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .to_owned();
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let decay = r.take(1)?[0] != 0;
        let raw = r.take(rows * cols * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| T::from_f64_lossy(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
            .collect();
        store.add(name, Matrix::from_vec(rows, cols, data)?, decay);
    }
    if !r.buf.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", r.buf.len())));
    }
    Ok(store)
}

pub fn save<T: Scalar>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(store))?;
    Ok(())
}

pub fn load<T: Scalar>(path: &Path) -> Result<ParamStore<T>> {
    decode(&fs::read(path)?)
}
