//! Parameter checkpoints: the 8-byte magic `MRNNCKPT`, the manifest length as
//! `u64`, a JSON manifest (names, shapes, byte offsets, free-form metadata),
//! then every tensor as little-endian `f32` in one blob.

use std::fs;
use std::path::Path;

use maskrnn_core::tensor::{ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MRNNCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset inside the blob.
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

pub fn encode_checkpoint(params: &ParamStore, metadata: &serde_json::Value) -> Result<Vec<u8>> {
    let mut blob = Vec::with_capacity(4 * params.num_values());
    let mut tensors = Vec::with_capacity(params.len());
    for (name, t) in params.iter() {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset: blob.len() as u64,
        });
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        tensors,
        metadata: metadata.clone(),
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| Error::json(Path::new("<checkpoint manifest>"), e))?;
    let mut out = Vec::with_capacity(16 + json.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<(ParamStore, serde_json::Value)> {
    let bad = |offset: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        message,
    };
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad(0, "not a checkpoint (expected magic MRNNCKPT)".into()));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let json = bytes
        .get(16..16usize.saturating_add(len))
        .ok_or_else(|| bad(8, format!("manifest length {len} exceeds file size {}", bytes.len())))?;
    let manifest: Manifest = serde_json::from_slice(json).map_err(|e| Error::json(path, e))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(bad(16, format!("format version {} (expected {FORMAT_VERSION})", manifest.format_version)));
    }
    let base = 16 + len;
    let blob = &bytes[base..];
    let mut params = ParamStore::new();
    let mut end = 0usize;
    for e in &manifest.tensors {
        let n: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let stop = start + 4 * n;
        let raw = blob
            .get(start..stop)
            .ok_or_else(|| bad(base + start, format!("tensor {} runs past the end of the blob", e.name)))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if params.contains(&e.name) {
            return Err(bad(16, format!("duplicate tensor {}", e.name)));
        }
        params.insert(e.name.clone(), Tensor::new(&e.shape, data)?);
        end = end.max(stop);
    }
    if end != blob.len() {
        return Err(bad(base + end, format!("{} unreferenced trailing bytes", blob.len() - end)));
    }
    Ok((params, manifest.metadata))
}

pub fn save_checkpoint(path: &Path, params: &ParamStore, metadata: &serde_json::Value) -> Result<()> {
    fs::write(path, encode_checkpoint(params, metadata)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, serde_json::Value)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

/// Store per-object parameter sets under `obj<i>/` (1-based).
pub fn pack_objects(sets: &[ParamStore]) -> ParamStore {
    let mut out = ParamStore::new();
    for (i, p) in sets.iter().enumerate() {
        out.extend(p.prefixed(&format!("obj{}/", i + 1)));
    }
    out
}

/// Inverse of [`pack_objects`]. A store without `obj<i>/` namespaces is one
/// set shared by every object.
pub fn unpack_objects(params: &ParamStore) -> Vec<ParamStore> {
    let mut sets = Vec::new();
    loop {
        let p = params.strip_prefix(&format!("obj{}/", sets.len() + 1));
        if p.is_empty() {
            break;
        }
        sets.push(p);
    }
    if sets.is_empty() {
        sets.push(params.clone());
    }
    sets
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("a/w", Tensor::new(&[2, 2], vec![1.0, -0.0, f32::MAX, 1e-40]).unwrap());
        p.insert("b", Tensor::new(&[3], vec![0.1, 0.2, 0.3]).unwrap());
        p
    }

    #[test]
    fn round_trip_is_bitwise() {
        let p = store();
        let meta = serde_json::json!({"seed": 3});
        let b = encode_checkpoint(&p, &meta).unwrap();
        let (q, m) = decode_checkpoint(&b, Path::new("x")).unwrap();
        assert!(p.bitwise_eq(&q));
        assert_eq!(m, meta);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let b = encode_checkpoint(&store(), &serde_json::Value::Null).unwrap();
        assert!(decode_checkpoint(&b[..b.len() - 1], Path::new("x")).is_err());
        let mut c = b.clone();
        c[0] = b'X';
        assert!(decode_checkpoint(&c, Path::new("x")).is_err());
        let mut d = b.clone();
        d.push(0);
        assert!(decode_checkpoint(&d, Path::new("x")).is_err());
    }

    #[test]
    fn object_namespaces() {
        let sets = vec![store(), store()];
        let packed = pack_objects(&sets);
        assert!(packed.contains("obj2/a/w"));
        let back = unpack_objects(&packed);
        assert_eq!(back.len(), 2);
        assert!(back[1].bitwise_eq(&sets[1]));
        assert_eq!(unpack_objects(&store()).len(), 1);
    }
}
