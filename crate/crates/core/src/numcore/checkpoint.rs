//! `COROCKPT` tensor checkpoints.
//!
//! Layout (little-endian): 8-byte magic, `u32` manifest length, JSON
//! manifest `{meta, tensors: [{name, shape, dtype, offset}]}`, then raw
//! `f64` payload. Offsets are bytes from the start of the payload.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"COROCKPT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub meta: BTreeMap<String, serde_json::Value>,
    pub tensors: Vec<TensorEntry>,
}

/// Named tensors plus free-form metadata (architecture, config, ...).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, serde_json::Value>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0;
        let tensors = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let e = TensorEntry { name: name.clone(), shape: t.shape().to_vec(), dtype: "f64".into(), offset };
                offset += t.len() * 8;
                e
            })
            .collect();
        let manifest = Manifest { meta: self.meta.clone(), tensors };
        let json = serde_json::to_vec(&manifest)?;
        let mut buf = Vec::with_capacity(12 + json.len() + offset);
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
        buf.extend_from_slice(&json);
        for (_, t) in &self.tensors {
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::BadFormat("missing COROCKPT magic".into()));
        }
        let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let json = bytes.get(12..12 + len).ok_or_else(|| Error::BadFormat("truncated manifest".into()))?;
        let manifest: Manifest =
            serde_json::from_slice(json).map_err(|e| Error::BadFormat(format!("manifest: {e}")))?;
        let payload = &bytes[12 + len..];
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        let mut expected_end = 0;
        for e in &manifest.tensors {
            if e.dtype != "f64" {
                return Err(Error::BadFormat(format!("tensor {} has dtype {}", e.name, e.dtype)));
            }
            let n: usize = e.shape.iter().product();
            let raw = payload
                .get(e.offset..e.offset + n * 8)
                .ok_or(Error::PayloadMismatch { expected: e.offset / 8 + n, actual: payload.len() / 8 })?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            tensors.push((e.name.clone(), Tensor::new(e.shape.clone(), data)?));
            expected_end = expected_end.max(e.offset + n * 8);
        }
        if expected_end != payload.len() {
            return Err(Error::PayloadMismatch { expected: expected_end / 8, actual: payload.len() / 8 });
        }
        Ok(Checkpoint { meta: manifest.meta, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::FileNotFound(path.to_path_buf()));
        }
        Checkpoint::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(seed in any::<u64>(), a in 1usize..5, b in 1usize..7) {
            let mut r = rng::stream(seed, &[]);
            let mut ck = Checkpoint::default();
            ck.meta.insert("arch".into(), serde_json::json!({"width": a}));
            ck.tensors.push(("w".into(), Tensor::uniform(&[a, b], 1e3, &mut r)));
            ck.tensors.push(("b".into(), Tensor::uniform(&[b], 1e-300, &mut r)));
            let bytes = ck.to_bytes().unwrap();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            prop_assert_eq!(&back, &ck);
            prop_assert_eq!(back.to_bytes().unwrap(), bytes);
        }
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let mut ck = Checkpoint::default();
        ck.tensors.push(("w".into(), Tensor::zeros(&[3, 3])));
        let mut bytes = ck.to_bytes().unwrap();
        bytes.truncate(bytes.len() - 8);
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::PayloadMismatch { .. })));
        assert!(matches!(Checkpoint::from_bytes(b"nope"), Err(Error::BadFormat(_))));
    }
}
