//! `NTC1` tensor container.
//!
//! Layout: magic `NTC1`, a little-endian `u64` header length, a UTF-8 JSON
//! header, then the raw payload. The header maps each tensor name to
//! `{dtype, shape, byte_offset, byte_len}` with offsets relative to the
//! payload start; the reserved key `__metadata__` holds free-form JSON.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Block, LayerNorm, LinearKind, ModelConfig, Transformer, VOCAB_SIZE};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NTC1";
const METADATA_KEY: &str = "__metadata__";

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32 { shape: Vec<usize>, data: Vec<f32> },
    U8 { shape: Vec<usize>, data: Vec<u8> },
}

impl TensorData {
    pub fn shape(&self) -> &[usize] {
        match self {
            TensorData::F32 { shape, .. } | TensorData::U8 { shape, .. } => shape,
        }
    }

    fn dtype(&self) -> &'static str {
        match self {
            TensorData::F32 { .. } => "f32",
            TensorData::U8 { .. } => "u8",
        }
    }

    fn bytes(&self) -> Vec<u8> {
        match self {
            TensorData::F32 { data, .. } => data.iter().flat_map(|v| v.to_le_bytes()).collect(),
            TensorData::U8 { data, .. } => data.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct HeaderEntry {
    dtype: String,
    shape: Vec<usize>,
    byte_offset: u64,
    byte_len: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    pub metadata: Value,
    pub tensors: BTreeMap<String, TensorData>,
}

impl Container {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = serde_json::Map::new();
        header.insert(METADATA_KEY.to_string(), self.metadata.clone());
        let mut payload = Vec::new();
        for (name, t) in &self.tensors {
            let bytes = t.bytes();
            let entry = HeaderEntry {
                dtype: t.dtype().to_string(),
                shape: t.shape().to_vec(),
                byte_offset: payload.len() as u64,
                byte_len: bytes.len() as u64,
            };
            header.insert(name.clone(), serde_json::to_value(entry).expect("plain struct"));
            payload.extend(bytes);
        }
        let header = serde_json::to_vec(&Value::Object(header)).expect("json map");
        let mut out = Vec::with_capacity(12 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        out
    }

    /// Parses and validates a container. Nothing is returned unless every
    /// tensor is in bounds, correctly sized and non-overlapping.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::MalformedCheckpoint(m);
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(bad("missing NTC1 magic".into()));
        }
        let header_len = u64::from_le_bytes(bytes[4..12].try_into().unwrap());
        let header_end = 12u64
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len() as u64)
            .ok_or_else(|| bad(format!("header length {header_len} exceeds file size")))?
            as usize;
        let header: serde_json::Map<String, Value> = serde_json::from_slice(&bytes[12..header_end])
            .map_err(|e| bad(format!("header is not a JSON object: {e}")))?;
        let payload = &bytes[header_end..];

        let mut metadata = Value::Null;
        let mut entries = Vec::new();
        for (name, v) in header {
            if name == METADATA_KEY {
                metadata = v;
                continue;
            }
            let e: HeaderEntry =
                serde_json::from_value(v).map_err(|e| bad(format!("entry {name}: {e}")))?;
            entries.push((name, e));
        }

        entries.sort_by_key(|(_, e)| (e.byte_offset, e.byte_len));
        let mut prev: Option<(&str, u64)> = None;
        for (name, e) in &entries {
            if let Some((pname, pend)) = prev {
                if e.byte_offset < pend {
                    return Err(Error::OffsetOverlap(format!(
                        "{name} starts at {} before {pname} ends at {pend}",
                        e.byte_offset
                    )));
                }
            }
            prev = Some((name, e.byte_offset + e.byte_len));
        }

        let mut tensors = BTreeMap::new();
        for (name, e) in entries {
            let elem = match e.dtype.as_str() {
                "f32" => 4u64,
                "u8" => 1,
                other => return Err(bad(format!("{name}: unsupported dtype {other}"))),
            };
            let numel: u64 = e.shape.iter().map(|&d| d as u64).product();
            if numel * elem != e.byte_len {
                return Err(bad(format!(
                    "{name}: shape {:?} needs {} bytes, header says {}",
                    e.shape,
                    numel * elem,
                    e.byte_len
                )));
            }
            let end = e.byte_offset.checked_add(e.byte_len).unwrap_or(u64::MAX);
            if end > payload.len() as u64 {
                return Err(bad(format!(
                    "{name}: bytes {}..{end} past payload end {}",
                    e.byte_offset,
                    payload.len()
                )));
            }
            let raw = &payload[e.byte_offset as usize..end as usize];
            let t = match e.dtype.as_str() {
                "f32" => TensorData::F32 {
                    shape: e.shape,
                    data: raw
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                },
                _ => TensorData::U8 {
                    shape: e.shape,
                    data: raw.to_vec(),
                },
            };
            tensors.insert(name, t);
        }
        Ok(Container { metadata, tensors })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub fn model_to_container(model: &Transformer) -> Container {
    let mut tensors = BTreeMap::new();
    model.visit_tensors(|name, shape, data, _| {
        tensors.insert(
            name.to_string(),
            TensorData::F32 {
                shape: shape.to_vec(),
                data: data.to_vec(),
            },
        );
    });
    Container {
        metadata: serde_json::json!({ "kind": "model", "config": model.config }),
        tensors,
    }
}

pub fn model_from_container(c: &Container) -> Result<Transformer> {
    let bad = |m: String| Error::MalformedCheckpoint(m);
    if c.metadata.get("kind").and_then(Value::as_str) != Some("model") {
        return Err(bad("container does not hold a model".into()));
    }
    let config: ModelConfig = serde_json::from_value(
        c.metadata
            .get("config")
            .cloned()
            .ok_or_else(|| bad("missing model config".into()))?,
    )
    .map_err(|e| bad(format!("model config: {e}")))?;
    config.validate().map_err(|e| bad(e.to_string()))?;

    let get = |name: &str, shape: &[usize]| -> Result<Vec<f32>> {
        match c.tensors.get(name) {
            Some(TensorData::F32 { shape: s, data }) if s == shape => Ok(data.clone()),
            Some(t) => Err(bad(format!(
                "{name}: expected f32 {shape:?}, found {} {:?}",
                t.dtype(),
                t.shape()
            ))),
            None => Err(bad(format!("missing tensor {name}"))),
        }
    };
    let mat = |name: &str, r: usize, k: usize| -> Result<Array2<f32>> {
        Ok(Array2::from_shape_vec((r, k), get(name, &[r, k])?).expect("checked shape"))
    };
    let vec1 = |name: &str, n: usize| -> Result<Array1<f32>> { Ok(Array1::from(get(name, &[n])?)) };
    let ln = |prefix: &str, n: usize| -> Result<LayerNorm> {
        Ok(LayerNorm {
            weight: vec1(&format!("{prefix}.weight"), n)?,
            bias: vec1(&format!("{prefix}.bias"), n)?,
        })
    };

    let d = config.d_model;
    let f = config.d_ff;
    let mut blocks = Vec::with_capacity(config.n_layers);
    for i in 0..config.n_layers {
        let lin = |kind: LinearKind, r: usize, k: usize| {
            mat(&super::LinearId { layer: i, kind }.to_string(), r, k)
        };
        blocks.push(Block {
            ln1: ln(&format!("blocks.{i}.ln1"), d)?,
            wq: lin(LinearKind::Query, d, d)?,
            wk: lin(LinearKind::Key, d, d)?,
            wv: lin(LinearKind::Value, d, d)?,
            wo: lin(LinearKind::Output, d, d)?,
            ln2: ln(&format!("blocks.{i}.ln2"), d)?,
            up: lin(LinearKind::Up, f, d)?,
            down: lin(LinearKind::Down, d, f)?,
        });
    }
    let model = Transformer {
        config,
        tok_emb: mat("tok_emb", VOCAB_SIZE, d)?,
        pos_emb: mat("pos_emb", config.max_seq_len, d)?,
        blocks,
        ln_f: ln("ln_f", d)?,
        lm_head: mat("lm_head.weight", VOCAB_SIZE, d)?,
        lm_bias: vec1("lm_head.bias", VOCAB_SIZE)?,
    };
    if !model.all_finite() {
        return Err(bad("non-finite parameter values".into()));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Transformer, path: &Path) -> Result<()> {
    model_to_container(model).write(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Transformer> {
    model_from_container(&Container::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Transformer {
        Transformer::new(ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_layers: 2,
            d_ff: 16,
            max_seq_len: 8,
            seed: 4,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = tiny();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ntc");
        save_checkpoint(&m, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        let a: Vec<u32> = m.param_slices().iter().flat_map(|s| s.iter().map(|v| v.to_bits())).collect();
        let b: Vec<u32> = back.param_slices().iter().flat_map(|s| s.iter().map(|v| v.to_bits())).collect();
        assert_eq!(a, b);
        assert_eq!(m, back);
        assert_eq!(&std::fs::read(&path).unwrap()[..4], b"NTC1");
    }

    #[test]
    fn truncated_payload_is_malformed() {
        let bytes = model_to_container(&tiny()).to_bytes();
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(Container::from_bytes(cut), Err(Error::MalformedCheckpoint(_))));
        assert!(matches!(Container::from_bytes(&bytes[..10]), Err(Error::MalformedCheckpoint(_))));
    }

    fn with_header(header: Value, payload: &[u8]) -> Vec<u8> {
        let h = serde_json::to_vec(&header).unwrap();
        let mut out = MAGIC.to_vec();
        out.extend((h.len() as u64).to_le_bytes());
        out.extend(h);
        out.extend(payload);
        out
    }

    #[test]
    fn overlapping_offsets_rejected() {
        let header = serde_json::json!({
            "a": {"dtype": "f32", "shape": [2], "byte_offset": 0, "byte_len": 8},
            "b": {"dtype": "f32", "shape": [2], "byte_offset": 4, "byte_len": 8},
        });
        let bytes = with_header(header, &[0u8; 16]);
        assert!(matches!(Container::from_bytes(&bytes), Err(Error::OffsetOverlap(_))));
    }

    #[test]
    fn shape_and_length_must_agree() {
        let header = serde_json::json!({
            "a": {"dtype": "f32", "shape": [3], "byte_offset": 0, "byte_len": 8},
        });
        let bytes = with_header(header, &[0u8; 8]);
        assert!(matches!(Container::from_bytes(&bytes), Err(Error::MalformedCheckpoint(_))));
    }

    #[test]
    fn u8_tensors_round_trip() {
        let mut c = Container::default();
        c.tensors.insert("m.mask".into(), TensorData::U8 { shape: vec![2, 2], data: vec![1, 0, 0, 1] });
        c.tensors.insert("w".into(), TensorData::F32 { shape: vec![1], data: vec![-0.5] });
        let back = Container::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.tensors, c.tensors);
    }

    #[test]
    fn missing_tensor_is_malformed() {
        let mut c = model_to_container(&tiny());
        c.tensors.remove("blocks.1.mlp.down");
        assert!(matches!(model_from_container(&c), Err(Error::MalformedCheckpoint(_))));
    }
}
