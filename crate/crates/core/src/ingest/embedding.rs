//! EMB1 container: `"EMB1"`, then little-endian `u32` version, T, D, followed
//! by T·D little-endian `f32` values in frame-major order.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub const EMB1_MAGIC: &[u8; 4] = b"EMB1";
pub const EMB1_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// Per-frame embedding matrix, `T × D`, every value finite, `T >= 1`, `D >= 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    frames: Array2<f64>,
}

impl EmbeddingSequence {
    pub fn new(frames: Array2<f64>) -> Result<Self> {
        let (t, d) = frames.dim();
        if t < 1 {
            return Err(Error::InvalidInput("embedding needs at least one frame".into()));
        }
        if d < 2 {
            return Err(Error::InvalidInput(format!(
                "embedding width D = {d}; need D >= 2"
            )));
        }
        if let Some(((frame, dim), _)) = frames.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFiniteEmbedding { frame, dim });
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &Array2<f64> {
        &self.frames
    }

    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.frames
    }
}

/// Serialize a matrix to EMB1 bytes. Values are narrowed to `f32`.
pub fn encode_embedding(frames: &Array2<f64>) -> Vec<u8> {
    let (t, d) = frames.dim();
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * t * d);
    buf.extend_from_slice(EMB1_MAGIC);
    buf.extend_from_slice(&EMB1_VERSION.to_le_bytes());
    buf.extend_from_slice(&(t as u32).to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    for &v in frames.iter() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    buf
}

pub fn decode_embedding(bytes: &[u8]) -> Result<EmbeddingSequence> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Embedding(format!(
            "truncated header ({} bytes)",
            bytes.len()
        )));
    }
    if &bytes[0..4] != EMB1_MAGIC {
        return Err(Error::Embedding(format!(
            "unrecognized magic {:?}",
            String::from_utf8_lossy(&bytes[0..4])
        )));
    }
    let field = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let version = field(4);
    if version != EMB1_VERSION {
        return Err(Error::Embedding(format!("unsupported version {version}")));
    }
    let t = field(8) as usize;
    let d = field(12) as usize;
    let expected = t
        .checked_mul(d)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Embedding(format!("header shape {t}x{d} overflows")))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::Embedding(format!(
            "truncated payload: header declares {t}x{d} ({expected} bytes), found {}",
            payload.len()
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let frames = Array2::from_shape_vec((t, d), values)
        .map_err(|e| Error::Embedding(e.to_string()))?;
    EmbeddingSequence::new(frames)
}

pub fn load_embedding(path: &Path) -> Result<EmbeddingSequence> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_embedding(&bytes).map_err(|e| match e {
        Error::Embedding(msg) => Error::Embedding(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_embedding(path: &Path, frames: &Array2<f64>) -> Result<()> {
    fs::write(path, encode_embedding(frames)).map_err(|e| Error::io(path, e))
}
