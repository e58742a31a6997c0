//! Named-tensor checkpoint container and its binary serialization.
//!
//! Wire layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "NLVC"
//! version u32      = 1
//! count   u32      number of entries
//! entry:  u16      name length
//!         ..       name bytes (UTF-8)
//!         u8       dtype: 0 = f32, 1 = bf16
//!         u8       ndim
//!         u32*     dims
//!         ..       payload (4 or 2 bytes per element, little-endian)
//! ```
//!
//! The step counter is in-memory metadata only; the wire format does not
//! carry it, so a decoded checkpoint reports step 0.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::store::ParamStore;

pub const MAGIC: [u8; 4] = *b"NLVC";
pub const FORMAT_VERSION: u32 = 1;

/// Payload of one named tensor.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    Bf16(Vec<u16>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::Bf16(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype_tag(&self) -> u8 {
        match self {
            TensorData::F32(_) => 0,
            TensorData::Bf16(_) => 1,
        }
    }

    /// Payload as f32 values, widening bfloat16 entries.
    pub fn to_f32(&self) -> Vec<f32> {
        match self {
            TensorData::F32(v) => v.clone(),
            TensorData::Bf16(v) => v
                .iter()
                .map(|&bits| crate::bf16::bf16_to_f32(crate::bf16::Bf16::from_bits(bits)))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

/// Serialized model state: format version, training step, named tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub step: u64,
    pub entries: Vec<CheckpointEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorKind {
    BadMagic,
    UnsupportedVersion(u32),
    UnexpectedEof { needed: usize },
    BadDtype(u8),
    NameNotUtf8,
    PayloadMismatch { shape_elems: usize },
    TrailingBytes,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CheckpointError {
    /// Malformed byte stream; `offset` is where decoding stopped.
    Parse { offset: usize, kind: ParseErrorKind },
    /// Averaging input was empty.
    NoCheckpoints,
    /// Averaging inputs disagree on names or shapes.
    SchemaMismatch { name: String },
    /// Loading into a store found a missing/extra/mis-shaped tensor.
    StoreMismatch { name: String },
}

impl fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Parse { offset, kind } => {
                write!(f, "checkpoint parse error at byte {offset}: ")?;
                match kind {
                    ParseErrorKind::BadMagic => write!(f, "bad magic"),
                    ParseErrorKind::UnsupportedVersion(v) => {
                        write!(f, "unsupported format version {v}")
                    }
                    ParseErrorKind::UnexpectedEof { needed } => {
                        write!(f, "unexpected end of data, needed {needed} more bytes")
                    }
                    ParseErrorKind::BadDtype(d) => write!(f, "unknown dtype tag {d}"),
                    ParseErrorKind::NameNotUtf8 => write!(f, "entry name is not UTF-8"),
                    ParseErrorKind::PayloadMismatch { shape_elems } => {
                        write!(f, "payload length disagrees with shape ({shape_elems} elements)")
                    }
                    ParseErrorKind::TrailingBytes => write!(f, "trailing bytes after last entry"),
                }
            }
            Self::NoCheckpoints => write!(f, "need at least one checkpoint"),
            Self::SchemaMismatch { name } => {
                write!(f, "checkpoint schemas disagree at entry {name:?}")
            }
            Self::StoreMismatch { name } => {
                write!(f, "checkpoint does not match parameter store at {name:?}")
            }
        }
    }
}

impl core::error::Error for CheckpointError {}

impl Checkpoint {
    /// Snapshot a parameter store (f32 payloads, store order preserved).
    pub fn from_store(store: &ParamStore, step: u64) -> Checkpoint {
        Checkpoint {
            version: FORMAT_VERSION,
            step,
            entries: store
                .iter()
                .map(|(name, t)| CheckpointEntry {
                    name: name.into(),
                    shape: t.shape().to_vec(),
                    data: TensorData::F32(t.data().to_vec()),
                })
                .collect(),
        }
    }

    pub fn entry(&self, name: &str) -> Option<&CheckpointEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Total payload bytes across entries (excluding headers).
    pub fn payload_bytes(&self) -> usize {
        self.entries
            .iter()
            .map(|e| match &e.data {
                TensorData::F32(v) => v.len() * 4,
                TensorData::Bf16(v) => v.len() * 2,
            })
            .sum()
    }
}

/// Write the wire format.
pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + ck.payload_bytes());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&ck.version.to_le_bytes());
    out.extend_from_slice(&(ck.entries.len() as u32).to_le_bytes());
    for e in &ck.entries {
        out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(e.data.dtype_tag());
        out.push(e.shape.len() as u8);
        for &d in &e.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match &e.data {
            TensorData::F32(v) => {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            TensorData::Bf16(v) => {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.offset + n > self.bytes.len() {
            return Err(CheckpointError::Parse {
                offset: self.offset,
                kind: ParseErrorKind::UnexpectedEof {
                    needed: self.offset + n - self.bytes.len(),
                },
            });
        }
        let s = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }
}

/// Parse the wire format. Corrupt input yields a structured error naming
/// the byte offset; no panics.
pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut r = Reader { bytes, offset: 0 };
    let magic_offset = r.offset;
    if r.take(4)? != MAGIC {
        return Err(CheckpointError::Parse {
            offset: magic_offset,
            kind: ParseErrorKind::BadMagic,
        });
    }
    let version_offset = r.offset;
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Parse {
            offset: version_offset,
            kind: ParseErrorKind::UnsupportedVersion(version),
        });
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name_offset = r.offset;
        let name = core::str::from_utf8(r.take(name_len)?)
            .map_err(|_| CheckpointError::Parse {
                offset: name_offset,
                kind: ParseErrorKind::NameNotUtf8,
            })?
            .into();
        let dtype_offset = r.offset;
        let dtype = r.u8()?;
        let ndim = r.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let elems: usize = shape.iter().product();
        let data = match dtype {
            0 => {
                let raw = r.take(elems * 4)?;
                TensorData::F32(
                    raw.chunks_exact(4)
                        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                        .collect(),
                )
            }
            1 => {
                let raw = r.take(elems * 2)?;
                TensorData::Bf16(
                    raw.chunks_exact(2)
                        .map(|c| u16::from_le_bytes([c[0], c[1]]))
                        .collect(),
                )
            }
            other => {
                return Err(CheckpointError::Parse {
                    offset: dtype_offset,
                    kind: ParseErrorKind::BadDtype(other),
                })
            }
        };
        entries.push(CheckpointEntry { name, shape, data });
    }
    if r.offset != bytes.len() {
        return Err(CheckpointError::Parse {
            offset: r.offset,
            kind: ParseErrorKind::TrailingBytes,
        });
    }
    Ok(Checkpoint {
        version,
        step: 0,
        entries,
    })
}

/// Element-wise arithmetic mean of several checkpoints with identical
/// schemas (same names and shapes, in order). Payloads are widened to f32
/// and accumulated in f64; the result is f32 with the step of the last
/// input.
pub fn average_checkpoints(cks: &[Checkpoint]) -> Result<Checkpoint, CheckpointError> {
    let first = cks.first().ok_or(CheckpointError::NoCheckpoints)?;
    for ck in &cks[1..] {
        if ck.entries.len() != first.entries.len() {
            return Err(CheckpointError::SchemaMismatch {
                name: "<entry count>".into(),
            });
        }
        for (a, b) in first.entries.iter().zip(&ck.entries) {
            if a.name != b.name || a.shape != b.shape {
                return Err(CheckpointError::SchemaMismatch {
                    name: b.name.clone(),
                });
            }
        }
    }
    let inv = 1.0 / cks.len() as f64;
    let entries = first
        .entries
        .iter()
        .enumerate()
        .map(|(i, proto)| {
            let mut acc = alloc::vec![0.0f64; proto.data.len()];
            for ck in cks {
                for (a, v) in acc.iter_mut().zip(ck.entries[i].data.to_f32()) {
                    *a += v as f64;
                }
            }
            CheckpointEntry {
                name: proto.name.clone(),
                shape: proto.shape.clone(),
                data: TensorData::F32(acc.iter().map(|&a| (a * inv) as f32).collect()),
            }
        })
        .collect();
    Ok(Checkpoint {
        version: FORMAT_VERSION,
        step: cks.last().unwrap().step,
        entries,
    })
}

/// Overwrite a parameter store's tensors from a checkpoint. Requires the
/// exact same set of names with matching shapes; bfloat16 payloads are
/// widened to f32.
pub fn load_into_store(ck: &Checkpoint, store: &mut ParamStore) -> Result<(), CheckpointError> {
    if ck.entries.len() != store.len() {
        return Err(CheckpointError::StoreMismatch {
            name: "<entry count>".into(),
        });
    }
    for e in &ck.entries {
        let t = store
            .get(&e.name)
            .ok_or_else(|| CheckpointError::StoreMismatch {
                name: e.name.clone(),
            })?;
        if t.shape() != e.shape.as_slice() {
            return Err(CheckpointError::StoreMismatch {
                name: e.name.clone(),
            });
        }
    }
    for e in &ck.entries {
        let t = store.get_mut(&e.name).expect("validated above");
        t.data_mut().copy_from_slice(&e.data.to_f32());
    }
    Ok(())
}

impl crate::model::VideoModel {
    /// Snapshot this model's parameters.
    pub fn checkpoint(&self, step: u64) -> Checkpoint {
        Checkpoint::from_store(&self.params, step)
    }

    /// Replace this model's parameters with a checkpoint's tensors
    /// (bfloat16 payloads are decoded to f32 first).
    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<(), CheckpointError> {
        load_into_store(ck, &mut self.params)
    }
}
