//! Checkpoint container: magic bytes, format version, a JSON header with the
//! model kind, config, and an ordered tensor manifest, then raw
//! little-endian f32 data per tensor in manifest order.

use std::fs;
use std::io::{self, Read as _, Write as _};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::NeuralError;

const MAGIC: &[u8; 8] = b"DISPCKPT";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    kind: String,
    config: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// A loaded checkpoint, before model-specific reconstruction.
#[derive(Debug)]
pub struct Checkpoint {
    pub kind: String,
    pub config: serde_json::Value,
    pub tensors: Vec<(String, Array2<f32>)>,
}

impl Checkpoint {
    pub fn expect_kind(&self, kind: &str) -> Result<(), NeuralError> {
        if self.kind != kind {
            return Err(NeuralError::CheckpointKind {
                found: self.kind.clone(),
                expected: kind.to_owned(),
            });
        }
        Ok(())
    }

    pub fn take_tensor(&mut self, name: &str) -> Result<Array2<f32>, NeuralError> {
        let pos = self
            .tensors
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| NeuralError::CheckpointCorrupt {
                offset: 0,
                reason: format!("missing tensor {name:?}"),
            })?;
        Ok(self.tensors.remove(pos).1)
    }
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    kind: &str,
    config: serde_json::Value,
    tensors: &[(String, &Array2<f32>)],
) -> Result<(), NeuralError> {
    let header = Header {
        kind: kind.to_owned(),
        config,
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: [t.nrows(), t.ncols()],
            })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header).map_err(|e| io::Error::other(e.to_string()))?;
    let mut out = io::BufWriter::new(fs::File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    out.write_all(&header_bytes)?;
    for (_, tensor) in tensors {
        for v in tensor.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, NeuralError> {
    let bytes = fs::read(path)?;
    let corrupt = |offset: u64, reason: &str| NeuralError::CheckpointCorrupt {
        offset,
        reason: reason.to_owned(),
    };
    if bytes.len() < 20 {
        return Err(corrupt(bytes.len() as u64, "file shorter than any header"));
    }
    if &bytes[0..8] != MAGIC {
        return Err(corrupt(0, "bad magic bytes"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("slice width"));
    if version != FORMAT_VERSION {
        return Err(NeuralError::CheckpointVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("slice width")) as usize;
    let header_end = 20 + header_len;
    if bytes.len() < header_end {
        return Err(corrupt(20, "truncated header"));
    }
    let header: Header = serde_json::from_slice(&bytes[20..header_end])
        .map_err(|e| corrupt(20, &format!("header JSON: {e}")))?;

    let mut offset = header_end;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in header.tensors {
        let count = entry.shape[0] * entry.shape[1];
        let end = offset + count * 4;
        if bytes.len() < end {
            return Err(corrupt(offset as u64, "truncated tensor data"));
        }
        let mut data = Vec::with_capacity(count);
        let mut cursor = &bytes[offset..end];
        let mut buf = [0u8; 4];
        for _ in 0..count {
            cursor.read_exact(&mut buf).expect("length checked");
            data.push(f32::from_le_bytes(buf));
        }
        let tensor = Array2::from_shape_vec((entry.shape[0], entry.shape[1]), data)
            .map_err(|e| corrupt(offset as u64, &format!("tensor shape: {e}")))?;
        tensors.push((entry.name, tensor));
        offset = end;
    }
    if offset != bytes.len() {
        return Err(corrupt(offset as u64, "trailing bytes after tensor data"));
    }
    Ok(Checkpoint {
        kind: header.kind,
        config: header.config,
        tensors,
    })
}
