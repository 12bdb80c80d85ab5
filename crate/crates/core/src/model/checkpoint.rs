//! Self-describing tensor container: magic, format version, JSON header with
//! a tensor directory, then raw little-endian f32 data.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Layout, ModelConfig, Params};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"PRSFMTNS";
pub const FORMAT_VERSION: u32 = 1;
const MODEL_KIND: &str = "model";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in elements from the start of the data section.
    pub offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    kind: String,
    config: Value,
    meta: Value,
    tensors: Vec<TensorEntry>,
}

/// Generic container contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub config: Value,
    pub meta: Value,
    pub tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
}

pub fn write_container(c: &Container, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut offset = 0;
    let mut entries = Vec::with_capacity(c.tensors.len());
    for (name, shape, data) in &c.tensors {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Tensor {
                name: name.clone(),
                reason: format!("shape {shape:?} does not match {} values", data.len()),
            });
        }
        entries.push(TensorEntry {
            name: name.clone(),
            shape: shape.clone(),
            offset,
        });
        offset += data.len();
    }
    let header = serde_json::to_vec(&Header {
        kind: c.kind.clone(),
        config: c.config.clone(),
        meta: c.meta.clone(),
        tensors: entries,
    })?;
    let mut buf = Vec::with_capacity(20 + header.len() + offset * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    for (_, _, data) in &c.tensors {
        for x in data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_container(path: impl AsRef<Path>) -> Result<Container> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_container(&bytes).map_err(|e| match e {
        Error::Corrupt(m) => Error::Corrupt(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn parse_container(bytes: &[u8]) -> Result<Container> {
    if bytes.len() < 20 {
        return Err(Error::Corrupt("file shorter than the fixed preamble".into()));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Corrupt("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::FormatVersion {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = &bytes[20..];
    if body.len() < hlen {
        return Err(Error::Corrupt("truncated header".into()));
    }
    let header: Header =
        serde_json::from_slice(&body[..hlen]).map_err(|e| Error::Corrupt(format!("unreadable header: {e}")))?;
    let data = &body[hlen..];
    let total: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    if data.len() != total * 4 {
        return Err(Error::Corrupt(format!(
            "data section holds {} bytes, directory expects {}",
            data.len(),
            total * 4
        )));
    }
    let mut tensors = Vec::with_capacity(header.tensors.len());
    let mut expected_offset = 0;
    for t in header.tensors {
        let n: usize = t.shape.iter().product();
        if t.offset != expected_offset {
            return Err(Error::Corrupt(format!("tensor {} has offset {}, expected {expected_offset}", t.name, t.offset)));
        }
        expected_offset += n;
        let values = data[t.offset * 4..(t.offset + n) * 4]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        tensors.push((t.name, t.shape, values));
    }
    Ok(Container {
        kind: header.kind,
        config: header.config,
        meta: header.meta,
        tensors,
    })
}

/// Trained model parameters with free-form metadata (vocabulary, run info).
#[derive(Debug, Clone)]
pub struct ModelCheckpoint {
    pub params: Params<f32>,
    pub meta: Value,
}

impl ModelCheckpoint {
    pub fn config(&self) -> &ModelConfig {
        &self.params.config
    }
}

pub fn save_checkpoint(ck: &ModelCheckpoint, path: impl AsRef<Path>) -> Result<()> {
    let p = &ck.params;
    let c = Container {
        kind: MODEL_KIND.into(),
        config: serde_json::to_value(&p.config)?,
        meta: ck.meta.clone(),
        tensors: p
            .layout
            .tensors
            .iter()
            .map(|t| (t.name.clone(), t.shape.clone(), p.data[t.range()].to_vec()))
            .collect(),
    };
    write_container(&c, path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelCheckpoint> {
    let c = read_container(path)?;
    if c.kind != MODEL_KIND {
        return Err(Error::Corrupt(format!("container holds a {:?}, not a model", c.kind)));
    }
    let config: ModelConfig =
        serde_json::from_value(c.config).map_err(|e| Error::Corrupt(format!("bad model config: {e}")))?;
    config.validate()?;
    let layout = Layout::new(&config);
    let mut data = vec![0f32; layout.total];
    let mut seen = vec![false; layout.tensors.len()];
    for (name, shape, values) in c.tensors {
        let (i, spec) = layout
            .tensors
            .iter()
            .enumerate()
            .find(|(_, t)| t.name == name)
            .ok_or_else(|| Error::Tensor {
                name: name.clone(),
                reason: "not part of the configured model".into(),
            })?;
        if spec.shape != shape {
            return Err(Error::Tensor {
                name,
                reason: format!("shape {shape:?}, config implies {:?}", spec.shape),
            });
        }
        data[spec.range()].copy_from_slice(&values);
        seen[i] = true;
    }
    if let Some(i) = seen.iter().position(|&s| !s) {
        return Err(Error::Tensor {
            name: layout.tensors[i].name.clone(),
            reason: "missing from checkpoint".into(),
        });
    }
    Ok(ModelCheckpoint {
        params: Params {
            config,
            layout: std::sync::Arc::new(layout),
            data,
        },
        meta: c.meta,
    })
}
