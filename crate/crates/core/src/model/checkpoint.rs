//! Flat binary container of named arrays.
//!
//! Layout: `b"LGCK"`, `u32` version, `u64` header length, a JSON header,
//! then the array payloads as little-endian floats at the header offsets
//! (relative to the end of the header).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};

const MAGIC: &[u8; 4] = b"LGCK";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    dtype: DType,
    offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    config: BTreeMap<String, String>,
    arrays: Vec<ArrayEntry>,
}

/// Decoded container contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub config: BTreeMap<String, String>,
    pub arrays: Vec<(String, Tensor)>,
}

impl Container {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

pub fn encode_container(config: &BTreeMap<String, String>, arrays: &[(&str, &Tensor)], dtype: DType) -> Result<Vec<u8>> {
    let mut offset = 0;
    let mut entries = Vec::with_capacity(arrays.len());
    for (name, t) in arrays {
        entries.push(ArrayEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            dtype,
            offset,
        });
        offset += t.numel() * dtype.width();
    }
    let header = serde_json::to_vec(&Header {
        config: config.clone(),
        arrays: entries,
    })
    .map_err(|e| Error::arg(format!("cannot encode header: {e}")))?;
    let mut out = Vec::with_capacity(16 + header.len() + offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, t) in arrays {
        for &v in t.data() {
            match dtype {
                DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
                DType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            }
        }
    }
    Ok(out)
}

pub fn decode_container(bytes: &[u8]) -> Result<Container> {
    let bad = |offset: usize, message: String| Error::Format { offset, message };
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(bad(0, "not a checkpoint container".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(bad(4, format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = 16usize
        .checked_add(hlen)
        .filter(|&b| b <= bytes.len())
        .ok_or_else(|| bad(8, format!("header length {hlen} exceeds file")))?;
    let header: Header =
        serde_json::from_slice(&bytes[16..body]).map_err(|e| bad(16, format!("bad header: {e}")))?;
    let mut arrays = Vec::with_capacity(header.arrays.len());
    for e in header.arrays {
        let n: usize = e.shape.iter().product();
        let start = body + e.offset;
        let end = start + n * e.dtype.width();
        let raw = bytes
            .get(start..end)
            .ok_or_else(|| bad(bytes.len(), format!("array `{}` truncated", e.name)))?;
        let data = match e.dtype {
            DType::F64 => raw.chunks(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
            DType::F32 => raw
                .chunks(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
        };
        arrays.push((e.name, Tensor::new(&e.shape, data)?));
    }
    Ok(Container {
        config: header.config,
        arrays,
    })
}

pub fn write_container(
    path: impl AsRef<Path>,
    config: &BTreeMap<String, String>,
    arrays: &[(&str, &Tensor)],
    dtype: DType,
) -> Result<()> {
    fs::write(path, encode_container(config, arrays, dtype)?)?;
    Ok(())
}

pub fn read_container(path: impl AsRef<Path>) -> Result<Container> {
    decode_container(&fs::read(path)?)
}

/// Saves every array of the store in f64.
pub fn save_store(path: impl AsRef<Path>, store: &ParamStore, config: &BTreeMap<String, String>) -> Result<()> {
    let arrays: Vec<(&str, &Tensor)> = store.ids().map(|id| (store.name(id), store.get(id))).collect();
    write_container(path, config, &arrays, DType::F64)
}

/// Overwrites every array of the store from a container with matching names
/// and shapes.
pub fn load_store(store: &mut ParamStore, container: &Container) -> Result<()> {
    for id in store.ids().collect::<Vec<_>>() {
        let name = store.name(id).to_string();
        let t = container
            .get(&name)
            .ok_or_else(|| Error::arg(format!("checkpoint lacks array `{name}`")))?;
        store.set(id, t.clone())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_both_dtypes() {
        let a = Tensor::from_fn(&[2, 3], |i| i as f64 * 0.25);
        let b = Tensor::new(&[1], vec![-1.5]).unwrap();
        let mut cfg = BTreeMap::new();
        cfg.insert("group".to_string(), "SE2".to_string());
        for dtype in [DType::F64, DType::F32] {
            let bytes = encode_container(&cfg, &[("a", &a), ("b", &b)], dtype).unwrap();
            let c = decode_container(&bytes).unwrap();
            assert_eq!(c.config, cfg);
            assert_eq!(c.get("a"), Some(&a));
            assert_eq!(c.get("b"), Some(&b));
        }
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let a = Tensor::zeros(&[4]);
        let bytes = encode_container(&BTreeMap::new(), &[("a", &a)], DType::F64).unwrap();
        assert!(decode_container(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(decode_container(&wrong), Err(Error::Format { offset: 0, .. })));
    }
}
