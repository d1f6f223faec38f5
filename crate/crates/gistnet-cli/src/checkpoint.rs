//! Binary checkpoint format:
//!
//! ```text
//! magic "GSTN" (4 bytes)
//! version u32 LE
//! config digest (32 bytes, sha256 of the resolved model config JSON)
//! tensor count u32 LE
//! per tensor:
//!   name length u16 LE, UTF-8 name
//!   dtype code u8 (1 = f32, 2 = f64)
//!   rank u8, dims u64 LE each
//!   raw row-major element data LE
//! ```
//!
//! Tensors are written in parameter order as `{layer}.weights` /
//! `{layer}.bias` pairs; save/load round-trips bitwise.

use crate::error::{CliError, CliResult};
use gistnet_core::layers::LayerParams;
use gistnet_core::model::ModelParams;
use gistnet_core::tensor::{DType, Scalar, Shape, Tensor};
use sha2::{Digest, Sha256};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"GSTN";
pub const VERSION: u32 = 1;

/// sha256 of the digest payload string.
pub fn config_digest(payload: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(payload.as_bytes());
    h.finalize().into()
}

fn push_tensor<T: Scalar>(out: &mut Vec<u8>, name: &str, t: &Tensor<T>) -> CliResult<()> {
    let name_bytes = name.as_bytes();
    if name_bytes.len() > u16::MAX as usize {
        return Err(CliError::Format(format!("tensor name too long: {name}")));
    }
    out.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
    out.extend_from_slice(name_bytes);
    out.push(T::DTYPE.code());
    let dims = t.dims();
    if dims.len() > u8::MAX as usize {
        return Err(CliError::Format(format!("tensor rank too large: {name}")));
    }
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(out);
    }
    Ok(())
}

/// Serialises parameters to the checkpoint format.
pub fn checkpoint_save<T: Scalar>(
    params: &ModelParams<T>,
    digest: &[u8; 32],
    path: &Path,
) -> CliResult<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(digest);
    let count = 2 * params.len() as u32;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, p) in params.iter() {
        push_tensor(&mut out, &format!("{name}.weights"), &p.weights)?;
        push_tensor(&mut out, &format!("{name}.bias"), &p.bias)?;
    }
    std::fs::write(path, out).map_err(|e| CliError::io(path.display().to_string(), e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> CliResult<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(CliError::Format(format!(
                "truncated checkpoint: reading {what} at offset {} needs {n} bytes, {} remain",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16_le(&mut self, what: &str) -> CliResult<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32_le(&mut self, what: &str) -> CliResult<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64_le(&mut self, what: &str) -> CliResult<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

/// One decoded tensor record.
pub struct RawTensor {
    pub name: String,
    pub dtype: DType,
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

/// Decodes the file into (digest, tensor records), verifying magic,
/// version, and framing; errors name the byte offset.
pub fn checkpoint_read(path: &Path) -> CliResult<([u8; 32], Vec<RawTensor>)> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path.display().to_string(), e))?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(CliError::Format(format!(
            "bad magic {magic:?} at offset 0, expected \"GSTN\""
        )));
    }
    let version = r.u32_le("version")?;
    if version != VERSION {
        return Err(CliError::Format(format!(
            "unsupported version {version} at offset 4, expected {VERSION}"
        )));
    }
    let mut digest = [0u8; 32];
    digest.copy_from_slice(r.take(32, "config digest")?);
    let count = r.u32_le("tensor count")?;
    let mut tensors = Vec::with_capacity(count as usize);
    for i in 0..count {
        let name_len = r.u16_le("name length")? as usize;
        let name_offset = r.pos;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| {
                CliError::Format(format!(
                    "tensor {i}: name at offset {name_offset} is not UTF-8"
                ))
            })?
            .to_string();
        let code_offset = r.pos;
        let code = r.take(1, "dtype code")?[0];
        let dtype = DType::from_code(code).ok_or_else(|| {
            CliError::Format(format!(
                "tensor '{name}': unknown dtype code {code} at offset {code_offset}"
            ))
        })?;
        let rank = r.take(1, "rank")?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u64_le("dim")? as usize);
        }
        let n: usize = dims.iter().product();
        let elem = match dtype {
            DType::F32 => 4,
            DType::F64 => 8,
        };
        let data = r.take(n * elem, "tensor data")?;
        let values: Vec<f64> = match dtype {
            DType::F32 => data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect(),
            DType::F64 => data
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        };
        tensors.push(RawTensor {
            name,
            dtype,
            dims,
            values,
        });
    }
    if r.pos != bytes.len() {
        return Err(CliError::Format(format!(
            "{} trailing bytes after tensor table at offset {}",
            bytes.len() - r.pos,
            r.pos
        )));
    }
    Ok((digest, tensors))
}

/// Reassembles `{layer}.weights` / `{layer}.bias` records into model
/// parameters of element type `T` (values cast if the stored dtype
/// differs).
pub fn checkpoint_load<T: Scalar>(path: &Path) -> CliResult<([u8; 32], ModelParams<T>)> {
    let (digest, tensors) = checkpoint_read(path)?;
    if tensors.len() % 2 != 0 {
        return Err(CliError::Format(format!(
            "expected weights/bias pairs, got {} tensors",
            tensors.len()
        )));
    }
    let mut params = ModelParams::new();
    let mut iter = tensors.into_iter();
    while let (Some(w), Some(b)) = (iter.next(), iter.next()) {
        let layer = w
            .name
            .strip_suffix(".weights")
            .ok_or_else(|| {
                CliError::Format(format!("expected '<layer>.weights', got '{}'", w.name))
            })?
            .to_string();
        let expected_bias = format!("{layer}.bias");
        if b.name != expected_bias {
            return Err(CliError::Format(format!(
                "expected '{expected_bias}' after '{}', got '{}'",
                w.name, b.name
            )));
        }
        let to_tensor = |raw: RawTensor| -> CliResult<Tensor<T>> {
            let shape = Shape::new(raw.dims.clone())
                .map_err(|e| CliError::Format(format!("tensor '{}': {e}", raw.name)))?;
            let data: Vec<T> = raw.values.iter().map(|&v| T::from_f64(v)).collect();
            Tensor::from_vec(shape, data)
                .map_err(|e| CliError::Format(format!("tensor '{}': {e}", raw.name)))
        };
        params.insert(
            layer,
            LayerParams {
                weights: to_tensor(w)?,
                bias: to_tensor(b)?,
            },
        );
    }
    Ok((digest, params))
}
