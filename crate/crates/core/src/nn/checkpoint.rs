//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//!
//! | bytes        | content                                   |
//! |--------------|-------------------------------------------|
//! | 8            | magic `COINCKPT`                          |
//! | 4            | format version (`u32`, currently 1)       |
//! | 8            | header length `H` in bytes (`u64`)        |
//! | H            | UTF-8 JSON [`CheckpointHeader`]           |
//! | rest         | tensor data, little-endian `dtype` values |
//!
//! Each tensor entry records its name, shape and element offset into the
//! data section. Tensors are written in the model's visiting order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoinError, Result};
use crate::nn::{Float, Parameters};

pub const MAGIC: &[u8; 8] = b"COINCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in elements from the start of the data section.
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    /// Model family, e.g. `"detector"` or `"corrector"`.
    pub kind: String,
    pub dtype: String,
    /// Free-form metadata needed to rebuild the model (config, vocabulary).
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

pub fn encode_checkpoint<F: Float, M: Parameters<F>>(kind: &str, meta: serde_json::Value, model: &M) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut data = Vec::new();
    let mut offset = 0;
    model.visit("", &mut |name, shape, values| {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            offset,
            len: values.len(),
        });
        offset += values.len();
        for &v in values {
            v.write_le(&mut data);
        }
    });
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        kind: kind.to_string(),
        dtype: F::DTYPE.to_string(),
        meta,
        tensors,
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(20 + header_bytes.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    out.extend_from_slice(&data);
    Ok(out)
}

/// Splits a checkpoint into its header and raw data section.
pub fn decode_header(bytes: &[u8]) -> Result<(CheckpointHeader, &[u8])> {
    let bad = |m: &str| CoinError::Checkpoint(m.to_string());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("missing COINCKPT magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(CoinError::Checkpoint(format!("unsupported format version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let header_end = 20usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[20..header_end])?;
    Ok((header, &bytes[header_end..]))
}

/// Copies tensors from a decoded checkpoint into `model`, whose layout must
/// match by name and shape. Values are converted to `F` if the stored dtype
/// differs.
pub fn load_into<F: Float, M: Parameters<F>>(header: &CheckpointHeader, data: &[u8], model: &mut M) -> Result<()> {
    let width = match header.dtype.as_str() {
        "f32" => 4,
        "f64" => 8,
        other => return Err(CoinError::Checkpoint(format!("unknown dtype {other}"))),
    };
    let read = |i: usize| -> F {
        let b = &data[i * width..(i + 1) * width];
        if width == 4 {
            F::c(f32::read_le(b) as f64)
        } else {
            F::c(f64::read_le(b))
        }
    };
    let total: usize = header.tensors.iter().map(|t| t.len).sum();
    if data.len() != total * width {
        return Err(CoinError::Checkpoint(format!(
            "data section has {} bytes, expected {}",
            data.len(),
            total * width
        )));
    }
    let mut expected = Vec::new();
    model.visit("", &mut |name, shape, _| expected.push((name.to_string(), shape.to_vec())));
    if expected.len() != header.tensors.len() {
        return Err(CoinError::Checkpoint(format!(
            "checkpoint has {} tensors, model expects {}",
            header.tensors.len(),
            expected.len()
        )));
    }
    for ((name, shape), entry) in expected.iter().zip(&header.tensors) {
        if *name != entry.name || *shape != entry.shape {
            return Err(CoinError::Checkpoint(format!(
                "tensor {} {:?} does not match model tensor {} {:?}",
                entry.name, entry.shape, name, shape
            )));
        }
    }
    let mut entries = header.tensors.iter();
    model.visit_mut("", &mut |_, values| {
        let entry = entries.next().expect("checked above");
        for (k, v) in values.iter_mut().enumerate() {
            *v = read(entry.offset + k);
        }
    });
    Ok(())
}

pub fn write_file(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, bytes).map_err(|e| CoinError::io(path, e))
}

pub fn read_file(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    fs::read(path).map_err(|e| CoinError::io(path, e))
}
