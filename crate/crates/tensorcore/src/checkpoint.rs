//! Binary parameter checkpoints.
//!
//! Layout: magic `NNW1`, then one record per tensor:
//! `u32 name_len, name bytes (UTF-8), u32 rank, rank x u32 dims, f32 data`,
//! all little-endian. Round trips are bit-exact, including NaN payloads.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::nn::ParamStore;
use crate::tensor::Tensor;
use crate::TensorError;

pub const MAGIC: &[u8; 4] = b"NNW1";

const MAX_NAME_LEN: u32 = 4096;
const MAX_RANK: u32 = 8;

pub fn encode(entries: &[(String, Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], TensorError> {
        if self.buf.len() - self.pos < n {
            return Err(TensorError::CorruptCheckpoint(format!(
                "truncated while reading {what} ({} bytes left, {n} needed)",
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, TensorError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>, TensorError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(TensorError::CorruptCheckpoint(format!(
            "bad magic {magic:02x?}"
        )));
    }
    let mut entries = Vec::new();
    while r.remaining() > 0 {
        let name_len = r.u32("name length")?;
        if name_len > MAX_NAME_LEN {
            return Err(TensorError::CorruptCheckpoint(format!(
                "name length {name_len} exceeds limit"
            )));
        }
        let name = std::str::from_utf8(r.take(name_len as usize, "name")?)
            .map_err(|_| TensorError::CorruptCheckpoint("name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32("rank")?;
        if rank > MAX_RANK {
            return Err(TensorError::CorruptCheckpoint(format!(
                "rank {rank} exceeds limit"
            )));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        let mut numel: usize = 1;
        for _ in 0..rank {
            let d = r.u32("dim")? as usize;
            numel = numel.checked_mul(d).ok_or_else(|| {
                TensorError::CorruptCheckpoint("dimension product overflows".into())
            })?;
            shape.push(d);
        }
        // Sizes must be backed by actual bytes before any allocation.
        if numel.checked_mul(4).map_or(true, |b| b > r.remaining()) {
            return Err(TensorError::CorruptCheckpoint(format!(
                "tensor {name:?} claims {numel} elements but only {} bytes remain",
                r.remaining()
            )));
        }
        let raw = r.take(numel * 4, "tensor data")?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        entries.push((name, Tensor::new(shape, data).expect("validated shape")));
    }
    Ok(entries)
}

pub fn save(path: &Path, entries: &[(String, Tensor)]) -> Result<(), TensorError> {
    let bytes = encode(entries);
    let mut f = fs::File::create(path)
        .map_err(|e| TensorError::Io(format!("create {}: {e}", path.display())))?;
    f.write_all(&bytes)
        .map_err(|e| TensorError::Io(format!("write {}: {e}", path.display())))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>, TensorError> {
    let bytes = fs::read(path)
        .map_err(|e| TensorError::Io(format!("read {}: {e}", path.display())))?;
    decode(&bytes)
}

pub fn save_store(path: &Path, store: &ParamStore) -> Result<(), TensorError> {
    let entries: Vec<(String, Tensor)> = store
        .entries()
        .map(|(n, t)| (n.to_string(), t.clone()))
        .collect();
    save(path, &entries)
}

pub fn load_store(path: &Path, store: &mut ParamStore) -> Result<(), TensorError> {
    let entries = load(path)?;
    store.load_entries(&entries)
}
