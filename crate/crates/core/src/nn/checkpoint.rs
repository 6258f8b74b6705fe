//! Checkpoint file format (version 1), all integers little-endian:
//!
//! ```text
//! offset  size  field
//! 0       8     magic  b"GSCKPT\0\0"
//! 8       4     u32    format version (1)
//! 12      8     u64    header length H in bytes
//! 20      H     UTF-8 JSON header
//! 20+H    ...   raw f64 LE arrays, one per header entry, in header order
//! ```
//!
//! The header is `{"format_version", "kind", "seed", "dtype": "f64-le",
//! "meta": {...}, "entries": [{"name", "role": "param"|"buffer", "shape"}]}`.
//! Parameters precede buffers; both keep store order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NetworkKind, ParameterStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GSCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Role {
    Param,
    Buffer,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    role: Role,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    kind: NetworkKind,
    seed: u64,
    dtype: String,
    meta: BTreeMap<String, serde_json::Value>,
    entries: Vec<Entry>,
}

pub fn encode_checkpoint(store: &ParameterStore) -> Result<Vec<u8>> {
    let entries = store
        .params()
        .map(|(n, t)| (n, t, Role::Param))
        .chain(store.buffers().map(|(n, t)| (n, t, Role::Buffer)));
    let mut tensors = Vec::new();
    let mut header_entries = Vec::new();
    for (name, t, role) in entries {
        header_entries.push(Entry {
            name: name.to_string(),
            role,
            shape: t.shape().to_vec(),
        });
        tensors.push(t);
    }
    let header = Header {
        format_version: CHECKPOINT_VERSION,
        kind: store.kind(),
        seed: store.seed(),
        dtype: "f64-le".into(),
        meta: store.meta().clone(),
        entries: header_entries,
    };
    let json = serde_json::to_vec(&header)?;
    let body: usize = tensors.iter().map(|t| t.numel() * 8).sum();
    let mut out = Vec::with_capacity(20 + json.len() + body);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParameterStore> {
    let corrupt = |m: &str| Error::CorruptCheckpoint(m.to_string());
    if bytes.len() < 20 {
        return Err(corrupt("file shorter than fixed preamble"));
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let header_bytes = bytes
        .get(20..20usize.saturating_add(hlen))
        .ok_or_else(|| corrupt("truncated header"))?;
    let header: Header =
        serde_json::from_slice(header_bytes).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: header.format_version,
            expected: CHECKPOINT_VERSION,
        });
    }
    if header.dtype != "f64-le" {
        return Err(corrupt("unknown dtype"));
    }
    let mut store = ParameterStore::new(header.kind, header.seed);
    for (k, v) in header.meta {
        store.set_meta(k, v);
    }
    let mut pos = 20 + hlen;
    for e in header.entries {
        let n: usize = e.shape.iter().product();
        let raw = bytes
            .get(pos..pos + n * 8)
            .ok_or_else(|| corrupt(&format!("truncated data for {}", e.name)))?;
        pos += n * 8;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(&e.shape, data)?;
        match e.role {
            Role::Param => store.insert_param(e.name, t)?,
            Role::Buffer => store.insert_buffer(e.name, t)?,
        }
    }
    if pos != bytes.len() {
        return Err(corrupt("trailing bytes after last tensor"));
    }
    Ok(store)
}

pub fn save_checkpoint(store: &ParameterStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(store)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ParameterStore> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, LayerKind, Network};

    fn store() -> ParameterStore {
        let mut net = Network::new(NetworkKind::Stage1Discriminator, vec![1, 4, 4]);
        net.push(
            "c",
            LayerKind::Conv {
                in_ch: 1,
                out_ch: 2,
                kernel: 2,
                stride: 2,
                padding: 0,
            },
        )
        .push("bn", LayerKind::BatchNorm { channels: 2 });
        let mut s = init_params(&net, 5).unwrap();
        s.set_meta("image_size", serde_json::json!(4));
        s
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let s = store();
        let a = encode_checkpoint(&s).unwrap();
        let back = decode_checkpoint(&a).unwrap();
        assert_eq!(back, s);
        assert_eq!(encode_checkpoint(&back).unwrap(), a);
    }

    #[test]
    fn truncated_and_versioned() {
        let a = encode_checkpoint(&store()).unwrap();
        assert!(matches!(
            decode_checkpoint(&a[..a.len() - 3]),
            Err(Error::CorruptCheckpoint(_))
        ));
        assert!(matches!(decode_checkpoint(&a[..10]), Err(Error::CorruptCheckpoint(_))));
        let mut b = a.clone();
        b[8] = 9;
        assert!(matches!(
            decode_checkpoint(&b),
            Err(Error::UnsupportedVersion { found: 9, .. })
        ));
    }
}
