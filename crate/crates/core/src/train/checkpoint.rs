//! Binary checkpoint container.
//!
//! Little-endian layout: magic `RNV2` | version u32 | metadata length u32 |
//! metadata (`key=value` lines in writer order) | per tensor: name length
//! u16, name, rank u8, dims u32 × rank, f32 payload. The `tensors` metadata
//! key holds the tensor count.

use std::collections::HashSet;
use std::io::{self, Write};

use super::TrainError;

pub const MAGIC: &[u8; 4] = b"RNV2";
pub const VERSION: u32 = 1;

pub struct TensorRef<'a> {
    pub name: &'a str,
    pub shape: &'a [usize],
    pub data: &'a [f32],
}

#[derive(Clone, Debug, PartialEq)]
pub struct StoredTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub metadata: Vec<(String, String)>,
    pub tensors: Vec<StoredTensor>,
}

impl Checkpoint {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, TrainError> {
        let raw = self
            .meta(key)
            .ok_or_else(|| TrainError::Checkpoint { offset: 12, msg: format!("missing metadata key `{key}`") })?;
        raw.parse().map_err(|_| TrainError::Checkpoint {
            offset: 12,
            msg: format!("bad value `{raw}` for metadata key `{key}`"),
        })
    }

    pub fn tensor(&self, name: &str) -> Option<&StoredTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn write_to<W: Write>(&self, w: W) -> io::Result<()> {
        let refs: Vec<TensorRef<'_>> = self
            .tensors
            .iter()
            .map(|t| TensorRef {
                name: &t.name,
                shape: &t.shape,
                data: &t.data,
            })
            .collect();
        write_checkpoint(w, &self.metadata, &refs)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("vec write");
        out
    }
}

/// Serializes a checkpoint; a `tensors` count entry is appended to the
/// metadata.
pub fn write_checkpoint<W: Write>(mut w: W, metadata: &[(String, String)], tensors: &[TensorRef<'_>]) -> io::Result<()> {
    let mut meta = String::new();
    for (k, v) in metadata.iter().filter(|(k, _)| k != "tensors") {
        assert!(!k.contains(['=', '\n']) && !v.contains('\n'), "metadata must be line-safe");
        meta.push_str(&format!("{k}={v}\n"));
    }
    meta.push_str(&format!("tensors={}\n", tensors.len()));
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(meta.len() as u32).to_le_bytes())?;
    w.write_all(meta.as_bytes())?;
    let mut buf = Vec::new();
    for t in tensors {
        let name = t.name.as_bytes();
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[t.shape.len() as u8])?;
        for &d in t.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        buf.clear();
        buf.reserve(4 * t.data.len());
        for v in t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], TrainError> {
        if self.bytes.len() - self.pos < n {
            return Err(TrainError::Checkpoint {
                offset: self.bytes.len(),
                msg: format!("truncated while reading {what} (needed {n} bytes at {})", self.pos),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32, TrainError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint, TrainError> {
    let err = |offset: usize, msg: String| TrainError::Checkpoint { offset, msg };
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(err(0, "bad magic (expected RNV2)".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(err(4, format!("unsupported version {version}")));
    }
    let meta_len = r.u32("metadata length")? as usize;
    let meta_at = r.pos;
    let meta = std::str::from_utf8(r.take(meta_len, "metadata")?)
        .map_err(|e| err(meta_at + e.valid_up_to(), "metadata is not UTF-8".into()))?;
    let mut metadata = Vec::new();
    let mut line_at = meta_at;
    for line in meta.split_terminator('\n') {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err(line_at, format!("malformed metadata line `{line}`")))?;
        metadata.push((k.to_string(), v.to_string()));
        line_at += line.len() + 1;
    }
    let count: usize = metadata
        .iter()
        .find(|(k, _)| k == "tensors")
        .and_then(|(_, v)| v.parse().ok())
        .ok_or_else(|| err(meta_at, "missing tensor count".into()))?;
    let mut tensors = Vec::with_capacity(count);
    let mut seen = HashSet::new();
    for _ in 0..count {
        let at = r.pos;
        let name_len = u16::from_le_bytes(r.take(2, "name length")?.try_into().expect("2 bytes")) as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| err(at + 2, "tensor name is not UTF-8".into()))?
            .to_string();
        if !seen.insert(name.clone()) {
            return Err(err(at, format!("duplicate tensor `{name}`")));
        }
        let rank = r.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        let n: usize = shape.iter().product();
        let payload = r.take(4 * n, "tensor payload")?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        tensors.push(StoredTensor { name, shape, data });
    }
    if r.pos != bytes.len() {
        return Err(err(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint { metadata, tensors })
}
