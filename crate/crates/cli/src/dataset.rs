//! Dataset container and file formats.
//!
//! Binary layout (all integers little-endian):
//!
//! ```text
//! magic    4 bytes  "Y8MF"
//! version  u32      = 1
//! count    u32      record count
//! dv       u32      visual feature dim
//! da       u32      audio feature dim
//! classes  u32      label vocabulary size
//! record:  u16      id length, then id bytes (UTF-8)
//!          u32      frame count N
//!          u16      label count, then u32 label ids
//!          f32*     N*dv visual values, row-major
//!          f32*     N*da audio values, row-major
//! ```
//!
//! A line-oriented text variant carries the same fields for hand-written
//! fixtures; [`DatasetFile::load`] sniffs the magic bytes and accepts
//! either.

use std::fmt;
use std::io;
use std::path::Path;

use nlvc_core::train::LabeledVideo;
use nlvc_core::Tensor;

pub const MAGIC: [u8; 4] = *b"Y8MF";
pub const FORMAT_VERSION: u32 = 1;
/// First token of the text variant's header line.
pub const TEXT_HEADER: &str = "y8mf-text";

#[derive(Debug)]
pub enum DatasetError {
    Io(io::Error),
    /// Malformed binary input; `offset` is where decoding stopped.
    Parse { offset: usize, msg: String },
    /// Malformed text input; `line` is 1-based.
    Text { line: usize, msg: String },
    /// Structurally valid but semantically inconsistent content.
    Invalid(String),
}

impl fmt::Display for DatasetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Io(e) => write!(f, "{e}"),
            Self::Parse { offset, msg } => {
                write!(f, "dataset parse error at byte {offset}: {msg}")
            }
            Self::Text { line, msg } => write!(f, "dataset text error at line {line}: {msg}"),
            Self::Invalid(msg) => write!(f, "invalid dataset: {msg}"),
        }
    }
}

impl std::error::Error for DatasetError {}

impl From<io::Error> for DatasetError {
    fn from(e: io::Error) -> Self {
        DatasetError::Io(e)
    }
}

/// A labeled video collection with shared feature dims and label vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    pub visual_dim: usize,
    pub audio_dim: usize,
    pub classes: usize,
    pub videos: Vec<LabeledVideo>,
}

impl DatasetFile {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.visual_dim == 0 || self.audio_dim == 0 || self.classes == 0 {
            return Err(DatasetError::Invalid("dims and classes must be >= 1".into()));
        }
        for v in &self.videos {
            if v.visual.cols() != self.visual_dim || v.audio.cols() != self.audio_dim {
                return Err(DatasetError::Invalid(format!(
                    "video {:?} feature dims disagree with the header",
                    v.id
                )));
            }
            if let Some(&l) = v.labels.iter().find(|&&l| l >= self.classes) {
                return Err(DatasetError::Invalid(format!(
                    "video {:?} label {l} out of range (classes = {})",
                    v.id, self.classes
                )));
            }
        }
        Ok(())
    }

    /// Per-video label sets, in order (for evaluation).
    pub fn label_sets(&self) -> Vec<Vec<usize>> {
        self.videos.iter().map(|v| v.labels.clone()).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.videos.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.visual_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.audio_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.classes as u32).to_le_bytes());
        for v in &self.videos {
            out.extend_from_slice(&(v.id.len() as u16).to_le_bytes());
            out.extend_from_slice(v.id.as_bytes());
            out.extend_from_slice(&(v.frames() as u32).to_le_bytes());
            out.extend_from_slice(&(v.labels.len() as u16).to_le_bytes());
            for &l in &v.labels {
                out.extend_from_slice(&(l as u32).to_le_bytes());
            }
            for x in v.visual.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
            for x in v.audio.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<DatasetFile, DatasetError> {
        let mut r = Reader { bytes, offset: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(DatasetError::Parse {
                offset: 0,
                msg: "bad magic".into(),
            });
        }
        let version_offset = r.offset;
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(DatasetError::Parse {
                offset: version_offset,
                msg: format!("unsupported format version {version}"),
            });
        }
        let count = r.u32()? as usize;
        let visual_dim = r.u32()? as usize;
        let audio_dim = r.u32()? as usize;
        let classes = r.u32()? as usize;
        let mut videos = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let id_len = r.u16()? as usize;
            let id_offset = r.offset;
            let id = std::str::from_utf8(r.take(id_len, "id")?)
                .map_err(|_| DatasetError::Parse {
                    offset: id_offset,
                    msg: "id is not UTF-8".into(),
                })?
                .to_string();
            let frames = r.u32()? as usize;
            let label_count = r.u16()? as usize;
            let mut labels = Vec::with_capacity(label_count);
            for _ in 0..label_count {
                labels.push(r.u32()? as usize);
            }
            let visual = r.f32s(frames * visual_dim)?;
            let audio = r.f32s(frames * audio_dim)?;
            let rec_offset = r.offset;
            let video = LabeledVideo::new(
                id,
                Tensor::from_vec(&[frames, visual_dim], visual).map_err(|e| {
                    DatasetError::Parse {
                        offset: rec_offset,
                        msg: e.to_string(),
                    }
                })?,
                Tensor::from_vec(&[frames, audio_dim], audio).map_err(|e| {
                    DatasetError::Parse {
                        offset: rec_offset,
                        msg: e.to_string(),
                    }
                })?,
                labels,
            )
            .map_err(|e| DatasetError::Parse {
                offset: rec_offset,
                msg: e.to_string(),
            })?;
            videos.push(video);
        }
        if r.offset != bytes.len() {
            return Err(DatasetError::Parse {
                offset: r.offset,
                msg: "trailing bytes after last record".into(),
            });
        }
        let ds = DatasetFile {
            visual_dim,
            audio_dim,
            classes,
            videos,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Text variant: a header line then one line per record.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{TEXT_HEADER} v={FORMAT_VERSION} dv={} da={} classes={}\n",
            self.visual_dim, self.audio_dim, self.classes
        );
        let join = |xs: &[f32]| -> String {
            xs.iter()
                .map(|x| format!("{x}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        let join_labels = |ls: &[usize]| -> String {
            ls.iter()
                .map(|l| l.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        for v in &self.videos {
            out.push_str(&format!(
                "id={} n={} labels={} visual={} audio={}\n",
                v.id,
                v.frames(),
                join_labels(&v.labels),
                join(v.visual.data()),
                join(v.audio.data()),
            ));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<DatasetFile, DatasetError> {
        let err = |line: usize, msg: &str| DatasetError::Text {
            line,
            msg: msg.into(),
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| err(1, "missing header"))?;
        let mut dims = (0usize, 0usize, 0usize);
        let mut tokens = header.split_whitespace();
        if tokens.next() != Some(TEXT_HEADER) {
            return Err(err(1, "missing text-format marker"));
        }
        for tok in tokens {
            let (key, value) = tok
                .split_once('=')
                .ok_or_else(|| err(1, "header fields must be key=value"))?;
            let parse = |v: &str| v.parse::<usize>().map_err(|_| err(1, "bad header number"));
            match key {
                "v" => {
                    if parse(value)? != FORMAT_VERSION as usize {
                        return Err(err(1, "unsupported format version"));
                    }
                }
                "dv" => dims.0 = parse(value)?,
                "da" => dims.1 = parse(value)?,
                "classes" => dims.2 = parse(value)?,
                _ => return Err(err(1, "unknown header field")),
            }
        }
        let (visual_dim, audio_dim, classes) = dims;
        let mut videos = Vec::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut id = String::new();
            let mut n = 0usize;
            let mut labels = Vec::new();
            let mut visual = Vec::new();
            let mut audio = Vec::new();
            for tok in line.split_whitespace() {
                let (key, value) = tok
                    .split_once('=')
                    .ok_or_else(|| err(lineno, "record fields must be key=value"))?;
                match key {
                    "id" => id = value.to_string(),
                    "n" => {
                        n = value
                            .parse()
                            .map_err(|_| err(lineno, "bad frame count"))?
                    }
                    "labels" => {
                        if !value.is_empty() {
                            for l in value.split(',') {
                                labels.push(
                                    l.parse().map_err(|_| err(lineno, "bad label id"))?,
                                );
                            }
                        }
                    }
                    "visual" => visual = parse_floats(value, lineno)?,
                    "audio" => audio = parse_floats(value, lineno)?,
                    _ => return Err(err(lineno, "unknown record field")),
                }
            }
            let video = LabeledVideo::new(
                id,
                Tensor::from_vec(&[n, visual_dim], visual)
                    .map_err(|e| err(lineno, &e.to_string()))?,
                Tensor::from_vec(&[n, audio_dim], audio)
                    .map_err(|e| err(lineno, &e.to_string()))?,
                labels,
            )
            .map_err(|e| err(lineno, &e.to_string()))?;
            videos.push(video);
        }
        let ds = DatasetFile {
            visual_dim,
            audio_dim,
            classes,
            videos,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn save_text(&self, path: &Path) -> Result<(), DatasetError> {
        Ok(std::fs::write(path, self.to_text())?)
    }

    /// Reads either format, deciding by the leading magic bytes.
    pub fn load(path: &Path) -> Result<DatasetFile, DatasetError> {
        let bytes = std::fs::read(path)?;
        if bytes.starts_with(&MAGIC) {
            Self::from_bytes(&bytes)
        } else {
            let text = std::str::from_utf8(&bytes).map_err(|_| DatasetError::Parse {
                offset: 0,
                msg: "neither binary magic nor UTF-8 text".into(),
            })?;
            Self::from_text(text)
        }
    }
}

fn parse_floats(csv: &str, lineno: usize) -> Result<Vec<f32>, DatasetError> {
    if csv.is_empty() {
        return Ok(Vec::new());
    }
    csv.split(',')
        .map(|t| {
            t.parse::<f32>().map_err(|_| DatasetError::Text {
                line: lineno,
                msg: format!("bad float {t:?}"),
            })
        })
        .collect()
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], DatasetError> {
        if self.offset + n > self.bytes.len() {
            return Err(DatasetError::Parse {
                offset: self.offset,
                msg: format!("unexpected end of data reading {what}"),
            });
        }
        let s = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, DatasetError> {
        let b = self.take(2, "u16")?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, DatasetError> {
        let b = self.take(4, "u32")?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, count: usize) -> Result<Vec<f32>, DatasetError> {
        let raw = self.take(count * 4, "f32 payload")?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}
