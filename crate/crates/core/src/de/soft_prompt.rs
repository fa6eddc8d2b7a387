//! The optimized variable: a `T x dim` matrix of virtual-token embeddings,
//! and its on-disk binary form.
//!
//! Layout: 12 magic bytes `SOFTPROMPT\0\0`, a little-endian `u32` format
//! version, `T` and `dim` as little-endian `u64`, then `T * dim`
//! little-endian `f32` values in row-major order.

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MAGIC: [u8; 12] = *b"SOFTPROMPT\0\0";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic header")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("shape {0} x {1} is too large")]
    ShapeOverflow(u64, u64),
    #[error("entry {0} is not finite")]
    NonFinite(usize),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, PartialEq)]
pub enum ShapeError {
    #[error("expected {expected} values for shape {rows} x {cols}, got {actual}")]
    Length {
        rows: usize,
        cols: usize,
        expected: usize,
        actual: usize,
    },
    #[error("token_count and embed_dim must be >= 1, got {0} x {1}")]
    Empty(usize, usize),
    #[error("entry {0} is not finite")]
    NonFinite(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftPrompt {
    token_count: usize,
    embed_dim: usize,
    values: Vec<f32>,
}

impl SoftPrompt {
    pub fn new(token_count: usize, embed_dim: usize, values: Vec<f32>) -> Result<Self, ShapeError> {
        if token_count == 0 || embed_dim == 0 {
            return Err(ShapeError::Empty(token_count, embed_dim));
        }
        let expected = token_count * embed_dim;
        if values.len() != expected {
            return Err(ShapeError::Length {
                rows: token_count,
                cols: embed_dim,
                expected,
                actual: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(ShapeError::NonFinite(i));
        }
        Ok(Self {
            token_count,
            embed_dim,
            values,
        })
    }

    pub fn zeros(token_count: usize, embed_dim: usize) -> Self {
        Self::new(token_count, embed_dim, vec![0.0; token_count * embed_dim])
            .expect("non-empty shape")
    }

    /// A prompt with no virtual tokens (the unsteered model).
    pub fn empty() -> Self {
        Self {
            token_count: 0,
            embed_dim: 0,
            values: Vec::new(),
        }
    }

    pub fn from_fn(token_count: usize, embed_dim: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut values = Vec::with_capacity(token_count * embed_dim);
        for t in 0..token_count {
            for d in 0..embed_dim {
                values.push(f(t, d));
            }
        }
        Self::new(token_count, embed_dim, values).expect("from_fn produced a valid matrix")
    }

    pub(crate) fn from_parts_unchecked(token_count: usize, embed_dim: usize, values: Vec<f32>) -> Self {
        debug_assert_eq!(values.len(), token_count * embed_dim);
        Self {
            token_count,
            embed_dim,
            values,
        }
    }

    pub fn token_count(&self) -> usize {
        self.token_count
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.token_count, self.embed_dim)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Row-major flattened entries.
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, token: usize) -> &[f32] {
        &self.values[token * self.embed_dim..(token + 1) * self.embed_dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        // chunks_exact panics on a zero chunk size.
        self.values.chunks_exact(self.embed_dim.max(1))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 16 + 4 * self.values.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.token_count as u64).to_le_bytes());
        out.extend_from_slice(&(self.embed_dim as u64).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        if bytes.len() < HEADER_LEN + 16 {
            if bytes.len() >= MAGIC.len() && bytes[..MAGIC.len()] != MAGIC {
                return Err(FormatError::BadMagic);
            }
            return Err(FormatError::Truncated {
                expected: HEADER_LEN + 16,
                actual: bytes.len(),
            });
        }
        if bytes[..MAGIC.len()] != MAGIC {
            return Err(FormatError::BadMagic);
        }
        let version = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        let rows = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let cols = u64::from_le_bytes(bytes[24..32].try_into().unwrap());
        let count = rows
            .checked_mul(cols)
            .and_then(|n| usize::try_from(n).ok())
            .and_then(|n| n.checked_mul(4))
            .ok_or(FormatError::ShapeOverflow(rows, cols))?;
        let payload = &bytes[32..];
        if payload.len() < count {
            return Err(FormatError::Truncated {
                expected: 32 + count,
                actual: bytes.len(),
            });
        }
        if payload.len() > count {
            return Err(FormatError::TrailingBytes(payload.len() - count));
        }
        let values: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(FormatError::NonFinite(i));
        }
        let (rows, cols) = (rows as usize, cols as usize);
        if rows == 0 || cols == 0 {
            return Ok(Self {
                token_count: rows,
                embed_dim: cols,
                values,
            });
        }
        Ok(Self::from_parts_unchecked(rows, cols, values))
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(&self.to_bytes())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, FormatError> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FormatError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// SHA-256 of the binary encoding, hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    pub fn min(&self) -> f32 {
        self.values.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn max(&self) -> f32 {
        self.values.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().map(|&v| f64::from(v)).sum::<f64>() / self.values.len() as f64
    }

    /// Squared Frobenius norm, accumulated in f64.
    pub fn squared_norm(&self) -> f64 {
        self.values.iter().map(|&v| f64::from(v) * f64::from(v)).sum()
    }
}
