//! Versioned binary checkpoint container for [`RouterModel`].
//!
//! All integers and floats are little-endian. Layout:
//!
//! ```text
//! offset  size  field
//! 0       8     magic b"QRTCKPT\0"
//! 8       4     format version (u32, currently 1)
//! 12      8     payload length P (u64)
//! 20      P     payload
//! 20+P    4     CRC-32 (IEEE) of the payload bytes
//! ```
//!
//! Payload, in order:
//!
//! ```text
//! u32 model count K
//! K x { str model_id, str display_name, u8 has_endpoint, [str endpoint] }
//! u32 dimension D, u32 word_lo, u32 word_hi, u32 char_lo, u32 char_hi, u8 lowercase
//! u32 K, u32 D (repeated for shape checking)
//! K*D x f64 weights, row-major (model-major)
//! K x f64 bias
//! ```
//!
//! `str` is a u32 byte length followed by UTF-8 bytes. Serialization is a
//! pure function of the model, so equal models produce equal files.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::dataset::{ModelRegistry, ModelSpec};
use crate::featurizer::FeaturizerConfig;
use crate::router::RouterModel;

pub const MAGIC: &[u8; 8] = b"QRTCKPT\0";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8;
const TRAILER_LEN: usize = 4;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a router checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("checkpoint checksum mismatch: {0}")]
    Checksum(String),
    #[error("malformed checkpoint payload: {0}")]
    Malformed(String),
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(u32::try_from(s.len()).expect("string under 4 GiB"));
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| CheckpointError::Malformed(format!("payload ends before byte {}", self.pos + n)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String, CheckpointError> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|e| CheckpointError::Malformed(e.to_string()))
    }
    fn flag(&mut self) -> Result<bool, CheckpointError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(CheckpointError::Malformed(format!("invalid flag byte {b}"))),
        }
    }
}

fn encode_payload(model: &RouterModel) -> Vec<u8> {
    let mut w = Writer(Vec::with_capacity(64 + 8 * (model.weights().len() + model.bias().len())));
    let registry = model.registry();
    w.u32(registry.len() as u32);
    for m in registry.models() {
        w.str(&m.model_id);
        w.str(&m.display_name);
        match &m.endpoint {
            Some(e) => {
                w.u8(1);
                w.str(e);
            }
            None => w.u8(0),
        }
    }
    let f = model.featurizer();
    w.u32(f.dimension);
    w.u32(f.word_ngram_range[0]);
    w.u32(f.word_ngram_range[1]);
    w.u32(f.char_ngram_range[0]);
    w.u32(f.char_ngram_range[1]);
    w.u8(u8::from(f.lowercase));
    w.u32(model.num_models() as u32);
    w.u32(f.dimension);
    for &v in model.weights() {
        w.f64(v);
    }
    for &v in model.bias() {
        w.f64(v);
    }
    w.0
}

fn decode_payload(payload: &[u8]) -> Result<RouterModel, CheckpointError> {
    let mut r = Reader { buf: payload, pos: 0 };
    let k = r.u32()? as usize;
    let mut models = Vec::with_capacity(k.min(1024));
    for _ in 0..k {
        let model_id = r.str()?;
        let display_name = r.str()?;
        let endpoint = if r.flag()? { Some(r.str()?) } else { None };
        models.push(ModelSpec {
            model_id,
            display_name,
            endpoint,
        });
    }
    let registry = ModelRegistry::new(models).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    let featurizer = FeaturizerConfig {
        dimension: r.u32()?,
        word_ngram_range: [r.u32()?, r.u32()?],
        char_ngram_range: [r.u32()?, r.u32()?],
        lowercase: r.flag()?,
    };
    let (rows, cols) = (r.u32()? as usize, r.u32()?);
    if rows != k || cols != featurizer.dimension {
        return Err(CheckpointError::Malformed(format!(
            "weight shape {rows}x{cols} does not match {k} models and dimension {}",
            featurizer.dimension
        )));
    }
    let n = rows
        .checked_mul(cols as usize)
        .filter(|&n| n.saturating_mul(8) <= payload.len())
        .ok_or_else(|| CheckpointError::Malformed("weight matrix larger than payload".into()))?;
    let weights = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
    let bias = (0..k).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
    if r.pos != payload.len() {
        return Err(CheckpointError::Malformed(format!(
            "{} trailing payload bytes",
            payload.len() - r.pos
        )));
    }
    RouterModel::from_parts(registry, featurizer, weights, bias)
        .map_err(|e| CheckpointError::Malformed(e.to_string()))
}

pub fn to_bytes(model: &RouterModel) -> Vec<u8> {
    let payload = encode_payload(model);
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + TRAILER_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<RouterModel, CheckpointError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(CheckpointError::Checksum("truncated header".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version { found: version });
    }
    let declared = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let available = (bytes.len() - HEADER_LEN) as u64;
    if available < TRAILER_LEN as u64 || declared != available - TRAILER_LEN as u64 {
        return Err(CheckpointError::Checksum(format!(
            "declared payload of {declared} bytes, file holds {}",
            available.saturating_sub(TRAILER_LEN as u64)
        )));
    }
    let end = HEADER_LEN + declared as usize;
    let payload = &bytes[HEADER_LEN..end];
    let stored = u32::from_le_bytes(bytes[end..].try_into().unwrap());
    let actual = crc32fast::hash(payload);
    if stored != actual {
        return Err(CheckpointError::Checksum(format!(
            "stored {stored:08x}, computed {actual:08x}"
        )));
    }
    decode_payload(payload)
}

pub fn save_checkpoint(model: &RouterModel, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, to_bytes(model)).map_err(|source| CheckpointError::Io {
        path: path.to_owned(),
        source,
    })
}

/// The checkpoint is self-describing: registry and featurizer come from the
/// file, never from the caller.
pub fn load_checkpoint(path: &Path) -> Result<RouterModel, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_owned(),
        source,
    })?;
    from_bytes(&bytes)
}
