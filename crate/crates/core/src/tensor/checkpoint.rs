//! Checkpoint container.
//!
//! Layout: the 6 magic bytes `DUB3D\0`, one UTF-8 JSON header terminated by
//! `\n`, zero padding up to the next 64-byte boundary, then each tensor as
//! little-endian `f32` values. Tensor offsets in the header are relative to
//! the start of the data section and are multiples of 64.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor, TensorError};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"DUB3D\0";
const ALIGN: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub variant: String,
    pub config_hash: String,
    pub step: u64,
    pub tensors: Vec<TensorEntry>,
    /// Free-form metadata such as the resolved run configuration.
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub meta: serde_json::Value,
}

fn align(n: usize) -> usize {
    n.div_ceil(ALIGN) * ALIGN
}

/// Writes named tensors to `path`. Names must be unique.
pub fn save_checkpoint(
    path: &Path,
    variant: &str,
    config_hash: &str,
    step: u64,
    meta: serde_json::Value,
    tensors: &[(&str, &Tensor)],
) -> Result<(), TensorError> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0;
    for (name, t) in tensors {
        if entries.iter().any(|e: &TensorEntry| e.name == *name) {
            return Err(TensorError::DuplicateParam(name.to_string()));
        }
        entries.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset = align(offset + t.numel() * 4);
    }
    let header = CheckpointHeader {
        variant: variant.to_string(),
        config_hash: config_hash.to_string(),
        step,
        tensors: entries,
        meta,
    };
    let json = serde_json::to_string(&header).map_err(|e| TensorError::Checkpoint(e.to_string()))?;

    let mut buf = Vec::with_capacity(align(CHECKPOINT_MAGIC.len() + json.len() + 1) + offset);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(json.as_bytes());
    buf.push(b'\n');
    buf.resize(align(buf.len()), 0);
    let data_start = buf.len();
    for ((_, t), entry) in tensors.iter().zip(&header.tensors) {
        buf.resize(data_start + entry.offset, 0);
        for &v in t.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    buf.resize(data_start + offset, 0);

    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

fn parse_header(bytes: &[u8]) -> Result<(CheckpointHeader, usize), TensorError> {
    if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC {
        return Err(TensorError::Checkpoint("missing DUB3D magic bytes".into()));
    }
    let rest = &bytes[CHECKPOINT_MAGIC.len()..];
    let newline = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| TensorError::Checkpoint("header line is not terminated".into()))?;
    let text = std::str::from_utf8(&rest[..newline]).map_err(|e| TensorError::Checkpoint(format!("header is not UTF-8: {e}")))?;
    let header: CheckpointHeader =
        serde_json::from_str(text).map_err(|e| TensorError::Checkpoint(format!("corrupt header: {e}")))?;
    let data_start = align(CHECKPOINT_MAGIC.len() + newline + 1);
    Ok((header, data_start))
}

/// Reads only the header.
pub fn read_header(path: &Path) -> Result<CheckpointHeader, TensorError> {
    let bytes = fs::read(path)?;
    parse_header(&bytes).map(|(h, _)| h)
}

/// Reads every tensor. When `expected_variant` is given, a header naming a
/// different variant is rejected.
pub fn load_checkpoint(
    path: &Path,
    expected_variant: Option<&str>,
) -> Result<(CheckpointHeader, Vec<(String, Tensor)>), TensorError> {
    let bytes = fs::read(path)?;
    let (header, data_start) = parse_header(&bytes)?;
    if let Some(expected) = expected_variant {
        if expected != header.variant {
            return Err(TensorError::VariantMismatch {
                expected: expected.to_string(),
                found: header.variant.clone(),
            });
        }
    }
    let mut out = Vec::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        let numel: usize = entry.shape.iter().product();
        if entry.shape.is_empty() || numel == 0 || entry.offset % ALIGN != 0 {
            return Err(TensorError::Checkpoint(format!(
                "tensor `{}` has invalid shape {:?} or offset {}",
                entry.name, entry.shape, entry.offset
            )));
        }
        let start = data_start + entry.offset;
        let end = start + numel * 4;
        if end > bytes.len() {
            return Err(TensorError::Checkpoint(format!("tensor `{}` extends past end of file", entry.name)));
        }
        let data = bytes[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        out.push((entry.name.clone(), Tensor::from_parts(entry.shape.clone(), data)));
    }
    Ok((header, out))
}

impl ParamStore {
    pub fn save(&self, path: &Path, variant: &str, config_hash: &str, step: u64, meta: serde_json::Value) -> Result<(), TensorError> {
        let tensors: Vec<(&str, &Tensor)> = self.iter().map(|p| (p.name.as_str(), &p.value)).collect();
        save_checkpoint(path, variant, config_hash, step, meta, &tensors)
    }

    /// Overwrites every parameter from a checkpoint. The checkpoint must
    /// hold exactly this store's names with matching shapes.
    pub fn load_into(&mut self, path: &Path, expected_variant: Option<&str>) -> Result<CheckpointHeader, TensorError> {
        let (header, tensors) = load_checkpoint(path, expected_variant)?;
        if tensors.len() != self.len() {
            if let Some(missing) = self.iter().find(|p| !tensors.iter().any(|(n, _)| n == &p.name)) {
                return Err(TensorError::Checkpoint(format!("tensor `{}` missing from checkpoint", missing.name)));
            }
        }
        for (name, t) in tensors {
            let p = self.get_mut(&name).ok_or_else(|| TensorError::UnknownParam(name.clone()))?;
            if p.value.shape() != t.shape() {
                return Err(TensorError::TensorShape {
                    name,
                    expected: p.value.shape().to_vec(),
                    found: t.shape().to_vec(),
                });
            }
            p.value = t;
        }
        Ok(header)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_store() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("a.weight", Tensor::new(vec![2, 3], vec![0.1, -0.2, 0.3, 1e-7, 5.5, -1e3]).unwrap(), 5e-4)
            .unwrap();
        s.insert("a.bias", Tensor::new(vec![3], vec![0.0, 1.0, std::f64::consts::PI]).unwrap(), 5e-4)
            .unwrap();
        s
    }

    #[test]
    fn round_trip_is_exact_at_32_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.dub3d");
        let s = sample_store();
        s.save(&path, "ff_fi8", "abc", 12, serde_json::Value::Null).unwrap();
        let (header, tensors) = load_checkpoint(&path, Some("ff_fi8")).unwrap();
        assert_eq!(header.step, 12);
        assert_eq!(header.config_hash, "abc");
        for ((name, t), p) in tensors.iter().zip(s.iter()) {
            assert_eq!(name, &p.name);
            let expected: Vec<f64> = p.value.data().iter().map(|&v| v as f32 as f64).collect();
            assert_eq!(t.data(), expected.as_slice());
        }
        for e in &header.tensors {
            assert_eq!(e.offset % 64, 0);
        }
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..6], CHECKPOINT_MAGIC);
    }

    #[test]
    fn variant_mismatch_names_both() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.dub3d");
        sample_store().save(&path, "ff_fi8", "h", 0, serde_json::Value::Null).unwrap();
        let err = load_checkpoint(&path, Some("sc_l2")).unwrap_err().to_string();
        assert!(err.contains("ff_fi8") && err.contains("sc_l2"), "{err}");
    }

    #[test]
    fn empty_store_writes_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.dub3d");
        ParamStore::new().save(&path, "single_st", "h", 0, serde_json::Value::Null).unwrap();
        let (header, tensors) = load_checkpoint(&path, None).unwrap();
        assert!(tensors.is_empty() && header.tensors.is_empty());
        let len = std::fs::metadata(&path).unwrap().len() as usize;
        assert_eq!(len % 64, 0);
    }

    #[test]
    fn shape_mismatch_on_load_names_tensor() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.dub3d");
        sample_store().save(&path, "v", "h", 0, serde_json::Value::Null).unwrap();
        let mut other = ParamStore::new();
        other.insert("a.weight", Tensor::zeros(&[3, 2]), 0.0).unwrap();
        other.insert("a.bias", Tensor::zeros(&[3]), 0.0).unwrap();
        let err = other.load_into(&path, None).unwrap_err().to_string();
        assert!(err.contains("a.weight"), "{err}");
    }

    #[test]
    fn corrupt_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.dub3d");
        std::fs::write(&path, b"DUB3D\0{not json\n").unwrap();
        assert!(matches!(load_checkpoint(&path, None), Err(TensorError::Checkpoint(_))));
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(load_checkpoint(&path, None), Err(TensorError::Checkpoint(_))));
    }
}
