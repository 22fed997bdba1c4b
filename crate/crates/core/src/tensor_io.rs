//! Portable binary tensor files.
//!
//! Layout, all integers little-endian:
//!
//! | bytes      | field                          |
//! |------------|--------------------------------|
//! | 4          | magic `GATN`                   |
//! | 4 (u32)    | format version, currently 1    |
//! | 4 (u32)    | element type, 1 = f64          |
//! | 4 (u32)    | number of dimensions `n`       |
//! | 8n (u64)   | dimension sizes                |
//! | 8 * prod   | row-major f64 data             |

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"GATN";
pub const VERSION: u32 = 1;
pub const DTYPE_F64: u32 = 1;

#[derive(Debug, Error)]
pub enum TensorIoError {
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    Version(u32),
    #[error("unsupported element type {0}")]
    DType(u32),
    #[error("tensor header is inconsistent: {0}")]
    Shape(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn write_tensor(mut w: impl Write, tensor: &ArrayD<f64>) -> Result<(), TensorIoError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&DTYPE_F64.to_le_bytes())?;
    w.write_all(&(tensor.ndim() as u32).to_le_bytes())?;
    for &d in tensor.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    // iter() walks in logical row-major order regardless of memory layout
    for v in tensor.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor(mut r: impl Read) -> Result<ArrayD<f64>, TensorIoError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(TensorIoError::BadMagic(magic));
    }
    let mut u32_buf = [0u8; 4];
    let mut read_u32 = |r: &mut dyn Read| -> std::io::Result<u32> {
        r.read_exact(&mut u32_buf)?;
        Ok(u32::from_le_bytes(u32_buf))
    };
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(TensorIoError::Version(version));
    }
    let dtype = read_u32(&mut r)?;
    if dtype != DTYPE_F64 {
        return Err(TensorIoError::DType(dtype));
    }
    let ndim = read_u32(&mut r)? as usize;
    let mut shape = Vec::with_capacity(ndim);
    let mut u64_buf = [0u8; 8];
    for _ in 0..ndim {
        r.read_exact(&mut u64_buf)?;
        shape.push(usize::try_from(u64::from_le_bytes(u64_buf)).map_err(|e| TensorIoError::Shape(e.to_string()))?);
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| TensorIoError::Shape("element count overflows".into()))?;
    let mut data = Vec::with_capacity(count.min(1 << 24));
    for _ in 0..count {
        r.read_exact(&mut u64_buf)?;
        data.push(f64::from_le_bytes(u64_buf));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(TensorIoError::Shape("trailing bytes after tensor data".into()));
    }
    ArrayD::from_shape_vec(IxDyn(&shape), data).map_err(|e| TensorIoError::Shape(e.to_string()))
}

pub fn save_tensor(path: &Path, tensor: &ArrayD<f64>) -> Result<(), TensorIoError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_tensor(&mut w, tensor)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensor(path: &Path) -> Result<ArrayD<f64>, TensorIoError> {
    read_tensor(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Human-readable dump: a `# shape` line, then one line per innermost row.
pub fn text_dump(tensor: &ArrayD<f64>) -> String {
    let shape = tensor.shape();
    let mut out = format!("# shape {:?}\n", shape);
    let inner = shape.last().copied().unwrap_or(1).max(1);
    let values: Vec<f64> = tensor.iter().copied().collect();
    for row in values.chunks(inner) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}
