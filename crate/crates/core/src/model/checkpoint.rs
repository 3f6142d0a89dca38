//! `LTC1` checkpoint format.
//!
//! ```text
//! bytes 0..4    magic "LTC1"
//! u32 LE        version (1)
//! u64 LE        header length in bytes
//! header        UTF-8 JSON: {"config": ModelConfig,
//!                            "<tensor>": {"shape": [..], "dtype": "f32", "offset": n}, ...}
//! payload       little-endian f32 data; offsets are relative to the payload start
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{ModelConfig, Parameters};
use crate::engine::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"LTC1";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
}

/// Serializes parameters (rounded to `f32`) into LTC1 bytes.
pub fn encode_checkpoint<F: Scalar>(params: &Parameters<F>) -> Result<Vec<u8>> {
    let mut header = Map::new();
    header.insert("config".into(), serde_json::to_value(params.config())?);
    let mut payload = Vec::with_capacity(params.parameter_count() * 4);
    for (name, t) in params.iter() {
        let entry = TensorEntry {
            shape: t.shape().to_vec(),
            dtype: "f32".into(),
            offset: payload.len() as u64,
        };
        header.insert(name.to_string(), serde_json::to_value(entry)?);
        for &v in t.data() {
            payload.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let header = serde_json::to_vec(&Value::Object(header))?;
    let mut out = Vec::with_capacity(16 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Parameters<f32>> {
    if bytes.len() < 16 {
        return Err(Error::format("checkpoint shorter than its fixed preamble"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::format(format!("bad magic {:?}", &bytes[0..4])));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(format!("unsupported version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let payload_start = 16usize
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| Error::format("header length runs past end of file"))?;
    let header: Map<String, Value> = serde_json::from_slice(&bytes[16..payload_start])
        .map_err(|e| Error::format(format!("header is not a JSON object: {e}")))?;
    let payload = &bytes[payload_start..];

    let mut header = header;
    let config: ModelConfig = serde_json::from_value(
        header
            .remove("config")
            .ok_or_else(|| Error::format("header lacks config"))?,
    )
    .map_err(|e| Error::format(format!("bad config: {e}")))?;
    config.validate()?;

    let mut tensors = BTreeMap::new();
    let mut consumed = 0usize;
    for (name, shape) in config.tensor_shapes() {
        let entry: TensorEntry = serde_json::from_value(
            header
                .remove(&name)
                .ok_or_else(|| Error::format(format!("header lacks tensor {name}")))?,
        )
        .map_err(|e| Error::format(format!("bad entry for {name}: {e}")))?;
        if entry.dtype != "f32" {
            return Err(Error::format(format!("{name}: unsupported dtype {}", entry.dtype)));
        }
        if entry.shape != shape {
            return Err(Error::format(format!(
                "{name}: header shape {:?} does not match config shape {:?}",
                entry.shape, shape
            )));
        }
        let n: usize = shape.iter().product();
        let start = entry.offset as usize;
        let end = start + 4 * n;
        if end > payload.len() {
            return Err(Error::format(format!("{name}: payload truncated")));
        }
        let data = payload[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        consumed += 4 * n;
        tensors.insert(name, Tensor::new(shape, data)?);
    }
    if let Some(extra) = header.keys().next() {
        return Err(Error::format(format!("unexpected header entry {extra}")));
    }
    if consumed != payload.len() {
        return Err(Error::format(format!(
            "payload holds {} bytes but header describes {consumed}",
            payload.len()
        )));
    }
    Parameters::from_tensors(config, tensors).map_err(|e| Error::format(e.to_string()))
}

pub fn save_checkpoint<F: Scalar>(params: &Parameters<F>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(params)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Parameters<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
