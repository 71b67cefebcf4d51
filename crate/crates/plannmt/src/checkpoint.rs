//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    "PLNMT1"
//! version  u16
//! kind     u8   (0 = structure code model, 1 = translation model)
//! wide     u8   (0 = f32 values, 1 = f64)
//! seed     u64  (parameter store RNG seed)
//! config   u32 length + UTF-8 snapshot of the resolved config
//! hashes   u32 count, then per entry: u32 name length + name, u64 hash
//! tensors  u32 count, then per entry: u32 name length + name,
//!          u8 rank, rank × u32 dims, dims product × f32/f64 values
//! ```
//!
//! Values are held as f64 in memory. The default f32 storage loses low
//! bits once, after which save→load→save is byte-identical; the wide flag
//! keeps full precision for gradient-check fixtures.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::numcore::{ParamStore, Tensor};

pub const MAGIC: &[u8; 6] = b"PLNMT1";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    CodeModel,
    Translation,
}

impl ModelKind {
    fn to_byte(self) -> u8 {
        match self {
            ModelKind::CodeModel => 0,
            ModelKind::Translation => 1,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(ModelKind::CodeModel),
            1 => Some(ModelKind::Translation),
            _ => None,
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            ModelKind::CodeModel => "structure code model",
            ModelKind::Translation => "translation model",
        }
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: not a checkpoint (bad magic)")]
    BadMagic { path: String },
    #[error("{path}: unsupported checkpoint version {found}")]
    BadVersion { path: String, found: u16 },
    #[error("{path}: truncated or corrupt checkpoint ({detail})")]
    Corrupt { path: String, detail: String },
    #[error("{path}: holds a {}, expected a {}", found.describe(), expected.describe())]
    KindMismatch {
        path: String,
        expected: ModelKind,
        found: ModelKind,
    },
    #[error(
        "{path}: vocabulary '{name}' does not match the checkpoint \
         (stored {stored:#018x}, current {actual:#018x})"
    )]
    VocabMismatch {
        path: String,
        name: String,
        stored: u64,
        actual: u64,
    },
}

/// Everything a checkpoint file holds, decoded.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub wide: bool,
    /// Resolved config snapshot, `key = value` lines.
    pub config_text: String,
    /// Named vocabulary content hashes, e.g. ("src", …), ("tgt", …).
    pub vocab_hashes: Vec<(String, u64)>,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn new(kind: ModelKind, params: ParamStore) -> Self {
        Checkpoint {
            kind,
            wide: false,
            config_text: String::new(),
            vocab_hashes: Vec::new(),
            params,
        }
    }

    pub fn with_wide(mut self, wide: bool) -> Self {
        self.wide = wide;
        self
    }

    pub fn with_config_text(mut self, text: impl Into<String>) -> Self {
        self.config_text = text.into();
        self
    }

    pub fn with_vocab_hash(mut self, name: impl Into<String>, hash: u64) -> Self {
        self.vocab_hashes.push((name.into(), hash));
        self
    }

    pub fn stored_hash(&self, name: &str) -> Option<u64> {
        self.vocab_hashes
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, h)| *h)
    }

    /// Error unless the stored hash for `name` equals `actual`. A missing
    /// entry also fails: it means the file was written for different inputs.
    pub fn check_vocab(&self, path: &Path, name: &str, actual: u64) -> Result<(), CheckpointError> {
        let stored = self.stored_hash(name).unwrap_or(0);
        if stored != actual {
            return Err(CheckpointError::VocabMismatch {
                path: path.display().to_string(),
                name: name.to_string(),
                stored,
                actual,
            });
        }
        Ok(())
    }
}

fn push_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(ckpt.kind.to_byte());
    buf.push(ckpt.wide as u8);
    buf.extend_from_slice(&ckpt.params.rng_seed().to_le_bytes());
    push_str(&mut buf, &ckpt.config_text);
    buf.extend_from_slice(&(ckpt.vocab_hashes.len() as u32).to_le_bytes());
    for (name, hash) in &ckpt.vocab_hashes {
        push_str(&mut buf, name);
        buf.extend_from_slice(&hash.to_le_bytes());
    }
    buf.extend_from_slice(&(ckpt.params.len() as u32).to_le_bytes());
    for (name, tensor) in ckpt.params.iter() {
        push_str(&mut buf, name);
        buf.push(tensor.shape().len() as u8);
        for dim in tensor.shape() {
            buf.extend_from_slice(&(*dim as u32).to_le_bytes());
        }
        if ckpt.wide {
            for v in tensor.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        } else {
            for v in tensor.data() {
                buf.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
    }
    buf
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, encode_checkpoint(ckpt)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Corrupt {
                path: self.path.display().to_string(),
                detail: format!("unexpected end of file in {what}"),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String, CheckpointError> {
        let len = self.u32(what)? as usize;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| CheckpointError::Corrupt {
            path: self.path.display().to_string(),
            detail: format!("invalid UTF-8 in {what}"),
        })
    }

    fn corrupt(&self, detail: impl Into<String>) -> CheckpointError {
        CheckpointError::Corrupt {
            path: self.path.display().to_string(),
            detail: detail.into(),
        }
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint, CheckpointError> {
    let mut cur = Cursor { bytes, pos: 0, path };
    if cur.take(MAGIC.len(), "magic").map(|m| m != MAGIC).unwrap_or(true) {
        return Err(CheckpointError::BadMagic {
            path: path.display().to_string(),
        });
    }
    let version = cur.u16("version")?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion {
            path: path.display().to_string(),
            found: version,
        });
    }
    let kind_byte = cur.u8("model kind")?;
    let kind = ModelKind::from_byte(kind_byte)
        .ok_or_else(|| cur.corrupt(format!("unknown model kind {kind_byte}")))?;
    let wide = match cur.u8("width flag")? {
        0 => false,
        1 => true,
        w => return Err(cur.corrupt(format!("unknown width flag {w}"))),
    };
    let seed = cur.u64("seed")?;
    let config_text = cur.string("config snapshot")?;
    let num_hashes = cur.u32("hash count")? as usize;
    let mut vocab_hashes = Vec::with_capacity(num_hashes);
    for _ in 0..num_hashes {
        let name = cur.string("hash name")?;
        let hash = cur.u64("hash value")?;
        vocab_hashes.push((name, hash));
    }
    let num_tensors = cur.u32("tensor count")? as usize;
    let mut params = ParamStore::new(seed);
    for _ in 0..num_tensors {
        let name = cur.string("tensor name")?;
        let rank = cur.u8("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32("tensor shape")? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        if wide {
            for chunk in cur.take(8 * len, "tensor values")?.chunks_exact(8) {
                data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
            }
        } else {
            for chunk in cur.take(4 * len, "tensor values")?.chunks_exact(4) {
                data.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
            }
        }
        let tensor = Tensor::from_vec(&shape, data)
            .map_err(|e| cur.corrupt(format!("tensor '{name}': {e}")))?;
        params
            .add(&name, tensor)
            .map_err(|_| cur.corrupt(format!("duplicate tensor '{name}'")))?;
    }
    if cur.pos != bytes.len() {
        return Err(cur.corrupt("trailing bytes after last tensor"));
    }
    Ok(Checkpoint {
        kind,
        wide,
        config_text,
        vocab_hashes,
        params,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_checkpoint(&bytes, path)
}

/// Load and fail unless the file holds a model of `kind`.
pub fn load_checkpoint_of_kind(
    path: &Path,
    kind: ModelKind,
) -> Result<Checkpoint, CheckpointError> {
    let ckpt = load_checkpoint(path)?;
    if ckpt.kind != kind {
        return Err(CheckpointError::KindMismatch {
            path: path.display().to_string(),
            expected: kind,
            found: ckpt.kind,
        });
    }
    Ok(ckpt)
}
