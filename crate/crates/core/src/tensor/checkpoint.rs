//! Checkpoint files: one line of header JSON, then little-endian `f64` blobs
//! concatenated in manifest order.

use super::{ParamSet, Tensor, TensorError};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    tensor_manifest: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    model_config: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamSet,
    /// Opaque configuration stored alongside the tensors.
    pub model_config: Option<serde_json::Value>,
}

fn io_err(e: std::io::Error) -> TensorError {
    TensorError::Checkpoint(e.to_string())
}

pub fn write_checkpoint(
    mut out: impl Write,
    params: &ParamSet,
    model_config: Option<&serde_json::Value>,
) -> Result<(), TensorError> {
    let header = Header {
        format_version: CHECKPOINT_FORMAT_VERSION,
        tensor_manifest: params
            .iter()
            .map(|(name, t)| ManifestEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                dtype: "f64".into(),
            })
            .collect(),
        model_config: model_config.cloned(),
    };
    let line = serde_json::to_string(&header).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
    out.write_all(line.as_bytes()).map_err(io_err)?;
    out.write_all(b"\n").map_err(io_err)?;
    for (_, t) in params.iter() {
        let mut buf = Vec::with_capacity(t.numel() * 8);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

pub fn read_checkpoint(mut input: impl BufRead) -> Result<Checkpoint, TensorError> {
    let mut line = String::new();
    input.read_line(&mut line).map_err(io_err)?;
    let header: Header = serde_json::from_str(line.trim_end())
        .map_err(|e| TensorError::Checkpoint(format!("bad header: {e}")))?;
    if header.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(TensorError::Checkpoint(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    let mut params = ParamSet::new();
    for entry in &header.tensor_manifest {
        if entry.dtype != "f64" {
            return Err(TensorError::Checkpoint(format!(
                "unsupported dtype `{}` for `{}`",
                entry.dtype, entry.name
            )));
        }
        if params.id(&entry.name).is_some() {
            return Err(TensorError::Checkpoint(format!("duplicate tensor `{}`", entry.name)));
        }
        let n: usize = entry.shape.iter().product();
        let mut raw = vec![0u8; n * 8];
        input
            .read_exact(&mut raw)
            .map_err(|e| TensorError::Checkpoint(format!("tensor `{}`: {e}", entry.name)))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.add(entry.name.clone(), Tensor::new(entry.shape.clone(), data)?);
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest).map_err(io_err)?;
    if !rest.is_empty() {
        return Err(TensorError::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    Ok(Checkpoint {
        params,
        model_config: header.model_config,
    })
}
