//! The `OTEB` binary matrix format.
//!
//! Layout, little-endian throughout:
//!
//! | offset | size | field |
//! |---|---|---|
//! | 0 | 4 | magic `OTEB` |
//! | 4 | 2 | version (`u16`, 1) |
//! | 6 | 4 | count (`u32`) |
//! | 10 | 4 | dim (`u32`) |
//! | 14 | 4·count·dim | row-major `f32` payload |

use std::path::Path;

use crate::error::{Error, Result};
use crate::ot::{EmbeddingMatrix, Matrix};

use super::atomic_write;

pub const MAGIC: [u8; 4] = *b"OTEB";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 14;

/// Serializes `m` to the on-disk layout. Entries are narrowed to `f32`.
pub fn encode_matrix(m: &Matrix) -> Result<Vec<u8>> {
    let count = u32::try_from(m.rows()).map_err(|_| Error::invalid("row count exceeds u32"))?;
    let dim = u32::try_from(m.cols()).map_err(|_| Error::invalid("column count exceeds u32"))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.data().len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    for &v in m.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

/// Parses the on-disk layout; `path` only labels errors.
pub fn decode_matrix(bytes: &[u8], path: &Path) -> Result<Matrix> {
    let fail = |detail: String| Error::Format {
        path: path.to_path_buf(),
        detail,
    };
    if bytes.len() < HEADER_LEN {
        return Err(fail(format!(
            "file is {} bytes, shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if bytes[..4] != MAGIC {
        return Err(fail(format!("bad magic {:02x?}, expected \"OTEB\"", &bytes[..4])));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(fail(format!("unsupported version {version}, expected {VERSION}")));
    }
    let count = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as u64;
    let dim = u32::from_le_bytes(bytes[10..14].try_into().expect("4 bytes")) as u64;
    let expected = HEADER_LEN as u64 + 4 * count * dim;
    if bytes.len() as u64 != expected {
        return Err(fail(format!(
            "declared {count}x{dim} needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    if count == 0 || dim == 0 {
        return Err(fail(format!("empty matrix {count}x{dim}")));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Matrix::new(count as usize, dim as usize, data).map_err(|e| fail(e.to_string()))
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_matrix(&bytes, path)
}

pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    atomic_write(path, &encode_matrix(m)?)
}

/// Reads an embedding file, rejecting non-finite entries.
pub fn read_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    let m = read_matrix(path)?;
    EmbeddingMatrix::new(m.rows(), m.cols(), m.into_data()).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

pub fn write_embeddings(path: &Path, e: &EmbeddingMatrix) -> Result<()> {
    write_matrix(path, e)
}
