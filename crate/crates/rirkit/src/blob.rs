//! Flat binary matrix files.
//!
//! Layout: a 16-byte header (4-byte magic, u32 version, u32 rows, u32 cols,
//! all little-endian) followed by row-major payload. Float matrices use
//! magic `F32M` with f32 payload; RVQ code grids use magic `RKQC` with u32
//! payload.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const F32_MAGIC: &[u8; 4] = b"F32M";
pub const CODES_MAGIC: &[u8; 4] = b"RKQC";
pub const BLOB_VERSION: u32 = 1;

fn encode_header(magic: &[u8; 4], rows: u32, cols: u32) -> [u8; 16] {
    let mut header = [0u8; 16];
    header[..4].copy_from_slice(magic);
    header[4..8].copy_from_slice(&BLOB_VERSION.to_le_bytes());
    header[8..12].copy_from_slice(&rows.to_le_bytes());
    header[12..16].copy_from_slice(&cols.to_le_bytes());
    header
}

fn decode_header(bytes: &[u8], magic: &[u8; 4], path: &Path) -> Result<(usize, usize)> {
    if bytes.len() < 16 {
        return Err(Error::Format(format!(
            "{}: file shorter than the 16-byte header",
            path.display()
        )));
    }
    if &bytes[..4] != magic {
        return Err(Error::Format(format!(
            "{}: bad magic {:?}, expected {:?}",
            path.display(),
            &bytes[..4],
            magic
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != BLOB_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported version {version}",
            path.display()
        )));
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    Ok((rows, cols))
}

fn check_payload(len: usize, rows: usize, cols: usize, elem: usize, path: &Path) -> Result<()> {
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(elem))
        .ok_or_else(|| Error::Format(format!("{}: dimension overflow", path.display())))?;
    if len != expected {
        return Err(Error::Format(format!(
            "{}: payload is {len} bytes, expected {expected} for {rows}x{cols}",
            path.display()
        )));
    }
    Ok(())
}

pub fn write_f32_matrix(
    path: impl AsRef<Path>,
    rows: usize,
    cols: usize,
    data: &[f32],
) -> Result<()> {
    assert_eq!(data.len(), rows * cols, "matrix payload size mismatch");
    let mut bytes = Vec::with_capacity(16 + data.len() * 4);
    bytes.extend_from_slice(&encode_header(F32_MAGIC, rows as u32, cols as u32));
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_f32_matrix(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<f32>)> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let (rows, cols) = decode_header(&bytes, F32_MAGIC, path)?;
    check_payload(bytes.len() - 16, rows, cols, 4, path)?;
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((rows, cols, data))
}

pub fn write_codes_matrix(
    path: impl AsRef<Path>,
    rows: usize,
    cols: usize,
    data: &[u32],
) -> Result<()> {
    assert_eq!(data.len(), rows * cols, "matrix payload size mismatch");
    let mut bytes = Vec::with_capacity(16 + data.len() * 4);
    bytes.extend_from_slice(&encode_header(CODES_MAGIC, rows as u32, cols as u32));
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_codes_matrix(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u32>)> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let (rows, cols) = decode_header(&bytes, CODES_MAGIC, path)?;
    check_payload(bytes.len() - 16, rows, cols, 4, path)?;
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((rows, cols, data))
}
