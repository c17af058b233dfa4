//! Binary container of named `f32` arrays.
//!
//! Layout: magic `T2NT`, format version (u32), then one record per array
//! until end of file: name length (u32), UTF-8 name, rank (u32), each
//! dimension (u64), raw values (f32). All integers and floats little-endian.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"T2NT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic bytes {0:?}, expected \"T2NT\"")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated file while reading {0}")]
    Truncated(&'static str),
    #[error("malformed record: {0}")]
    Malformed(String),
}

pub type NamedArray = (String, Tensor<f32>);

pub fn write_arrays<W: Write>(mut w: W, arrays: &[NamedArray]) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    for (name, t) in arrays {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.numel() * 4);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], what: &'static str) -> Result<(), CheckpointError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => CheckpointError::Truncated(what),
        _ => CheckpointError::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R, what: &'static str) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    read_exact_or(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

/// Reads the first byte of a record, or `None` at a clean end of file.
fn peek_record<R: Read>(r: &mut R) -> Result<Option<u8>, CheckpointError> {
    let mut b = [0u8; 1];
    loop {
        match r.read(&mut b) {
            Ok(0) => return Ok(None),
            Ok(_) => return Ok(Some(b[0])),
            Err(e) if e.kind() == ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        }
    }
}

pub fn read_arrays<R: Read>(mut r: R) -> Result<Vec<NamedArray>, CheckpointError> {
    let mut magic = [0u8; 4];
    read_exact_or(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = read_u32(&mut r, "version")?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let mut arrays = Vec::new();
    while let Some(first) = peek_record(&mut r)? {
        let mut rest = [0u8; 3];
        read_exact_or(&mut r, &mut rest, "name length")?;
        let name_len = u32::from_le_bytes([first, rest[0], rest[1], rest[2]]) as usize;
        let mut name = vec![0u8; name_len];
        read_exact_or(&mut r, &mut name, "name")?;
        let name = String::from_utf8(name).map_err(|e| CheckpointError::Malformed(format!("name is not UTF-8: {e}")))?;
        let rank = read_u32(&mut r, "rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            read_exact_or(&mut r, &mut b, "dimension")?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| CheckpointError::Malformed(format!("{name}: shape {shape:?} overflows")))?;
        let mut raw = vec![0u8; numel * 4];
        read_exact_or(&mut r, &mut raw, "values")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Malformed(format!("{name}: {e}")))?;
        arrays.push((name, t));
    }
    Ok(arrays)
}

pub fn save(path: impl AsRef<Path>, arrays: &[NamedArray]) -> io::Result<()> {
    write_arrays(BufWriter::new(File::create(path)?), arrays)
}

pub fn load(path: impl AsRef<Path>) -> Result<Vec<NamedArray>, CheckpointError> {
    read_arrays(BufReader::new(File::open(path)?))
}
