//! PTNS v1 binary tensor container.
//!
//! Layout (all multi-byte fields little-endian):
//!
//! | bytes        | field                                |
//! |--------------|--------------------------------------|
//! | 0..4         | magic `PTNS` (`50 54 4E 53`)         |
//! | 4..6         | version, u16 = 1                     |
//! | 6            | dtype, u8 (1 = f32, 2 = f64)         |
//! | 7            | rank, u8                             |
//! | 8..8+8·rank  | dimensions, u64 each                 |
//! | rest         | row-major payload                    |

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::Matrix;

pub const MAGIC: [u8; 4] = *b"PTNS";
pub const VERSION: u16 = 1;
const FIXED_HEADER_LEN: usize = 8;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("bad magic bytes at offset {offset}: expected 50 54 4E 53")]
    BadMagic { offset: usize },
    #[error("unsupported version {version} at offset {offset}")]
    UnsupportedVersion { version: u16, offset: usize },
    #[error("unsupported dtype code {code} at offset {offset}")]
    UnsupportedDType { code: u8, offset: usize },
    #[error("truncated header at offset {offset}: need {needed} bytes, file has {available}")]
    TruncatedHeader {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("truncated payload at offset {offset}: expected {expected} bytes, found {found}")]
    TruncatedPayload {
        offset: usize,
        expected: usize,
        found: usize,
    },
    #[error("{extra} trailing bytes after payload at offset {offset}")]
    TrailingBytes { offset: usize, extra: usize },
    #[error("non-finite value at byte offset {offset}")]
    NonFiniteValue { offset: usize },
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 1,
            DType::F64 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(DType::F32),
            2 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
        }
    }

    fn value(&self, i: usize) -> f64 {
        match self {
            TensorData::F32(v) => v[i] as f64,
            TensorData::F64(v) => v[i],
        }
    }

    fn first_non_finite(&self) -> Option<usize> {
        match self {
            TensorData::F32(v) => v.iter().position(|x| !x.is_finite()),
            TensorData::F64(v) => v.iter().position(|x| !x.is_finite()),
        }
    }
}

/// A validated tensor: non-empty shape whose product matches the payload,
/// all scalars finite.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    shape: Vec<u64>,
    data: TensorData,
}

fn element_count(shape: &[u64]) -> Result<usize, TensorError> {
    if shape.is_empty() {
        return Err(TensorError::InvalidShape("empty shape list".into()));
    }
    if shape.len() > u8::MAX as usize {
        return Err(TensorError::InvalidShape(format!("rank {} exceeds 255", shape.len())));
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &d| {
            usize::try_from(d).ok().and_then(|d| acc.checked_mul(d))
        })
        .ok_or_else(|| TensorError::InvalidShape(format!("{shape:?} overflows the address space")))
}

impl TensorFile {
    pub fn new(shape: Vec<u64>, data: TensorData) -> Result<Self, TensorError> {
        let count = element_count(&shape)?;
        if count != data.len() {
            return Err(TensorError::InvalidShape(format!(
                "shape {shape:?} holds {count} scalars but payload has {}",
                data.len()
            )));
        }
        if let Some(i) = data.first_non_finite() {
            return Err(TensorError::NonFiniteValue {
                offset: FIXED_HEADER_LEN + 8 * shape.len() + i * data.dtype().width(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn from_matrix(m: &Matrix, dtype: DType) -> Result<Self, TensorError> {
        let (rows, cols) = m.shape();
        let row_major = (0..rows).flat_map(|i| (0..cols).map(move |j| m[(i, j)]));
        let data = match dtype {
            DType::F32 => TensorData::F32(row_major.map(|x| x as f32).collect()),
            DType::F64 => TensorData::F64(row_major.collect()),
        };
        Self::new(vec![rows as u64, cols as u64], data)
    }

    pub fn shape(&self) -> &[u64] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    /// Rank-2 tensors map to rows × cols; rank-1 tensors become a single column.
    pub fn to_matrix(&self) -> Result<Matrix, TensorError> {
        let (rows, cols) = match self.shape.as_slice() {
            [n] => (*n as usize, 1),
            [r, c] => (*r as usize, *c as usize),
            other => {
                return Err(TensorError::InvalidShape(format!(
                    "expected rank 1 or 2, got rank {}",
                    other.len()
                )))
            }
        };
        Ok(Matrix::from_fn(rows, cols, |i, j| self.data.value(i * cols + j)))
    }
}

pub fn encode(tensor: &TensorFile) -> Vec<u8> {
    let width = tensor.dtype().width();
    let mut out =
        Vec::with_capacity(FIXED_HEADER_LEN + 8 * tensor.shape.len() + width * tensor.data.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(tensor.dtype().code());
    out.push(tensor.shape.len() as u8);
    for d in &tensor.shape {
        out.extend_from_slice(&d.to_le_bytes());
    }
    match &tensor.data {
        TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    out
}

fn need(bytes: &[u8], offset: usize, len: usize) -> Result<(), TensorError> {
    if bytes.len() < offset + len {
        return Err(TensorError::TruncatedHeader {
            offset,
            needed: len,
            available: bytes.len().saturating_sub(offset),
        });
    }
    Ok(())
}

pub fn decode(bytes: &[u8]) -> Result<TensorFile, TensorError> {
    need(bytes, 0, MAGIC.len())?;
    if bytes[..4] != MAGIC {
        return Err(TensorError::BadMagic { offset: 0 });
    }
    need(bytes, 4, 2)?;
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(TensorError::UnsupportedVersion { version, offset: 4 });
    }
    need(bytes, 6, 2)?;
    let dtype = DType::from_code(bytes[6])
        .ok_or(TensorError::UnsupportedDType { code: bytes[6], offset: 6 })?;
    let rank = bytes[7] as usize;
    if rank == 0 {
        return Err(TensorError::InvalidShape("rank 0 at offset 7".into()));
    }
    need(bytes, FIXED_HEADER_LEN, 8 * rank)?;
    let shape: Vec<u64> = bytes[FIXED_HEADER_LEN..FIXED_HEADER_LEN + 8 * rank]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let count = element_count(&shape)?;
    let start = FIXED_HEADER_LEN + 8 * rank;
    let payload = &bytes[start..];
    let expected = count
        .checked_mul(dtype.width())
        .ok_or_else(|| TensorError::InvalidShape(format!("{shape:?} overflows the address space")))?;
    if payload.len() < expected {
        return Err(TensorError::TruncatedPayload {
            offset: start + payload.len(),
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(TensorError::TrailingBytes {
            offset: start + expected,
            extra: payload.len() - expected,
        });
    }
    let data = match dtype {
        DType::F32 => TensorData::F32(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
                .collect(),
        ),
        DType::F64 => TensorData::F64(
            payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect(),
        ),
    };
    if let Some(i) = data.first_non_finite() {
        return Err(TensorError::NonFiniteValue { offset: start + i * dtype.width() });
    }
    Ok(TensorFile { shape, data })
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<TensorFile, TensorError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| TensorError::IoFailure {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes)
}

pub fn write_tensor(tensor: &TensorFile, path: impl AsRef<Path>) -> Result<(), TensorError> {
    let path = path.as_ref();
    fs::write(path, encode(tensor)).map_err(|source| TensorError::IoFailure {
        path: path.display().to_string(),
        source,
    })
}

/// Convenience: read a rank-1/2 tensor straight into a matrix.
pub fn read_matrix(path: impl AsRef<Path>) -> Result<Matrix, TensorError> {
    read_tensor(path)?.to_matrix()
}

pub fn write_matrix(m: &Matrix, dtype: DType, path: impl AsRef<Path>) -> Result<(), TensorError> {
    write_tensor(&TensorFile::from_matrix(m, dtype)?, path)
}
