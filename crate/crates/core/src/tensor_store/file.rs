//! `TBT1` tensor files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   b"TBT1"
//! dtype   u8        0 = F32, 1 = I8
//! rank    u8
//! dims    rank x u64
//! payload product(dims) x dtype size, row-major
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::tensor::{DType, Tensor, TensorData};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TBT1";

const HEADER_FIXED: usize = 6;

/// Exact size in bytes of the encoded file for a tensor of this shape.
pub fn encoded_len(dtype: DType, dims: &[usize]) -> usize {
    HEADER_FIXED + 8 * dims.len() + dtype.size_of() * dims.iter().product::<usize>()
}

fn encode(t: &Tensor) -> Result<Vec<u8>> {
    let rank = u8::try_from(t.rank())
        .map_err(|_| Error::InvalidTensor(format!("rank {} exceeds 255", t.rank())))?;
    let mut buf = Vec::with_capacity(encoded_len(t.dtype(), t.dims()));
    buf.extend_from_slice(MAGIC);
    buf.push(t.dtype().code());
    buf.push(rank);
    for &d in t.dims() {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match t.data() {
        TensorData::F32(v) => {
            for x in v {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        TensorData::I8(v) => buf.extend(v.iter().map(|&x| x as u8)),
    }
    Ok(buf)
}

/// Writes `t` to `path`. The bytes go to a sibling temporary file that is
/// renamed into place, so a failed write never leaves a partial file at `path`.
pub fn write_tensor(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let buf = encode(t)?;
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".partial");
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

fn decode(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let truncated = |expected: usize| Error::Truncated {
        path: path.to_path_buf(),
        expected: expected as u64,
        found: bytes.len() as u64,
    };
    if bytes.len() < 4 {
        return Err(truncated(HEADER_FIXED));
    }
    if &bytes[..4] != MAGIC {
        let mut found = [0u8; 4];
        found.copy_from_slice(&bytes[..4]);
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found,
        });
    }
    if bytes.len() < HEADER_FIXED {
        return Err(truncated(HEADER_FIXED));
    }
    let dtype = DType::from_code(bytes[4]).ok_or_else(|| Error::UnknownDType {
        path: path.to_path_buf(),
        code: bytes[4],
    })?;
    let rank = bytes[5] as usize;
    let header_len = HEADER_FIXED + 8 * rank;
    if bytes.len() < header_len {
        return Err(truncated(header_len));
    }
    let dims: Vec<usize> = bytes[HEADER_FIXED..header_len]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let numel = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::InvalidTensor(format!("element count overflows: {dims:?}")))?;
    let expected = header_len + numel * dtype.size_of();
    let payload = &bytes[header_len..];
    if bytes.len() < expected {
        return Err(truncated(expected));
    }
    if bytes.len() > expected {
        return Err(Error::TrailingBytes {
            path: path.to_path_buf(),
            expected: expected as u64,
            found: bytes.len() as u64,
        });
    }
    let data = match dtype {
        DType::F32 => TensorData::F32(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        DType::I8 => TensorData::I8(payload.iter().map(|&b| b as i8).collect()),
    };
    Tensor::new(dims, data)
}
