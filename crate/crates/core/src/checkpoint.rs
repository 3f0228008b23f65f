//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "INFG"  u32 version  [32] config digest  u64 step
//! str config_text
//! u32 n_meta    { str key  str value }
//! u32 n_groups  { str name  u8 frozen }
//! u32 n_tensors { str name  u32 rank  u64 dims[rank]  f32 data[prod(dims)] }
//! [32] SHA-256 of every preceding byte
//! ```
//!
//! `str` is a u32 byte length followed by UTF-8.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"INFG";
pub const VERSION: u32 = 1;

pub type TensorMap = BTreeMap<String, (Vec<usize>, Vec<f32>)>;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_digest: [u8; 32],
    pub step: u64,
    pub config_text: String,
    pub meta: BTreeMap<String, String>,
    /// Parameter group name → frozen flag.
    pub groups: BTreeMap<String, bool>,
    pub tensors: TensorMap,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("invalid UTF-8 string".into()))
    }
}

impl Checkpoint {
    pub fn new(config_digest: [u8; 32], config_text: String) -> Self {
        Self {
            config_digest,
            step: 0,
            config_text,
            meta: BTreeMap::new(),
            groups: BTreeMap::new(),
            tensors: BTreeMap::new(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.config_digest);
        out.extend_from_slice(&self.step.to_le_bytes());
        put_str(&mut out, &self.config_text);
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.groups.len() as u32).to_le_bytes());
        for (name, frozen) in &self.groups {
            put_str(&mut out, name);
            out.push(u8::from(*frozen));
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, (dims, data)) in &self.tensors {
            put_str(&mut out, name);
            out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
            for &d in dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let sum = Sha256::digest(&out);
        out.extend_from_slice(&sum);
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < MAGIC.len() || &buf[..4] != MAGIC {
            return Err(Error::Checkpoint("bad magic: not a checkpoint file".into()));
        }
        if buf.len() < 8 {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let version = u32::from_le_bytes(buf[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (expected {VERSION})"
            )));
        }
        if buf.len() < 8 + 32 {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let (body, sum) = buf.split_at(buf.len() - 32);
        if Sha256::digest(body).as_slice() != sum {
            return Err(Error::Checkpoint("checksum mismatch: file is truncated or corrupted".into()));
        }
        let mut r = Reader { buf: body, pos: 8 };
        let config_digest: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let step = r.u64()?;
        let config_text = r.str()?;
        let mut meta = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.str()?;
            meta.insert(k, r.str()?);
        }
        let mut groups = BTreeMap::new();
        for _ in 0..r.u32()? {
            let name = r.str()?;
            groups.insert(name, r.u8()? != 0);
        }
        let mut tensors = BTreeMap::new();
        for _ in 0..r.u32()? {
            let name = r.str()?;
            let rank = r.u32()? as usize;
            let dims = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let count = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Checkpoint(format!("tensor {name} is too large")))?;
            let bytes = r.take(count.checked_mul(4).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.insert(name, (dims, data));
        }
        if r.pos != body.len() {
            return Err(Error::Checkpoint("trailing bytes after tensors".into()));
        }
        Ok(Self {
            config_digest,
            step,
            config_text,
            meta,
            groups,
            tensors,
        })
    }

    /// Writes via a temporary file and rename, so a crash never leaves a
    /// half-written checkpoint under `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }

    /// Refuses a checkpoint written under a different architecture unless forced.
    pub fn check_digest(&self, expected: &[u8; 32], force: bool) -> Result<()> {
        if &self.config_digest != expected && !force {
            return Err(Error::Checkpoint(format!(
                "config digest mismatch: checkpoint {} vs config {} (use --force to override)",
                &hex::encode(self.config_digest)[..12],
                &hex::encode(expected)[..12]
            )));
        }
        Ok(())
    }

    /// Tensors whose name starts with `prefix`, prefix stripped.
    pub fn tensors_with_prefix(&self, prefix: &str) -> TensorMap {
        self.tensors
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
            .collect()
    }
}
