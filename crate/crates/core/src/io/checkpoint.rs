//! Checkpoint files: one line of JSON manifest, a newline, then a blob of
//! little-endian `f32` values laid out as the manifest says.
//!
//! The manifest records the format version, the run configuration, and for
//! every parameter (and optionally every optimizer moment) its name, shape,
//! byte offset into the blob and element count.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::io::config::RunConfig;
use crate::model::OctufModel;
use crate::tensor::Tensor;
use crate::train::{AdamConfig, AdamState};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerEntry {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub first: Vec<TensorEntry>,
    pub second: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub config: Value,
    pub params: Vec<TensorEntry>,
    pub optimizer: Option<OptimizerEntry>,
}

/// Everything a checkpoint restores.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub model: OctufModel<f32>,
    pub optimizer: Option<AdamState<f32>>,
}

fn lay_out<'a>(
    names: impl Iterator<Item = String>,
    tensors: impl Iterator<Item = &'a Tensor<f32>>,
    blob: &mut Vec<u8>,
) -> Vec<TensorEntry> {
    names
        .zip(tensors)
        .map(|(name, t)| {
            let entry = TensorEntry {
                name,
                shape: t.shape().to_vec(),
                offset: blob.len(),
                count: t.len(),
            };
            for v in t.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
            entry
        })
        .collect()
}

/// Serialises to bytes (manifest line plus blob).
pub fn encode(
    config: &RunConfig,
    model: &OctufModel<f32>,
    optimizer: Option<&AdamState<f32>>,
) -> Vec<u8> {
    let mut blob = Vec::with_capacity(model.params.scalar_count() * 4);
    let names = || model.params.iter().map(|(_, n, _)| n.to_string());
    let params = lay_out(names(), model.params.tensors().iter(), &mut blob);
    let optimizer = optimizer.map(|a| OptimizerEntry {
        step: a.step,
        beta1: a.config.beta1,
        beta2: a.config.beta2,
        eps: a.config.eps,
        first: lay_out(names(), a.first.iter(), &mut blob),
        second: lay_out(names(), a.second.iter(), &mut blob),
    });
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config: serde_json::to_value(config).expect("plain struct serialises"),
        params,
        optimizer,
    };
    let mut out = serde_json::to_vec(&manifest).expect("manifest serialises");
    out.push(b'\n');
    out.extend_from_slice(&blob);
    out
}

pub fn save(
    path: &Path,
    config: &RunConfig,
    model: &OctufModel<f32>,
    optimizer: Option<&AdamState<f32>>,
) -> Result<()> {
    std::fs::write(path, encode(config, model, optimizer)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Format { message, .. } => Error::Format {
            path: path.to_path_buf(),
            message,
        },
        Error::Config(fields) => Error::Format {
            path: path.to_path_buf(),
            message: format!("stored configuration is invalid: {}", Error::Config(fields)),
        },
        other => other,
    })
}

fn malformed(message: impl Into<String>) -> Error {
    Error::Format {
        path: Default::default(),
        message: message.into(),
    }
}

/// Reads the tensors listed in `entries`, checking that they tile the blob
/// contiguously from `*cursor` and match the expected names and shapes.
fn read_tensors(
    entries: &[TensorEntry],
    expected: &OctufModel<f32>,
    blob: &[u8],
    cursor: &mut usize,
) -> Result<Vec<Tensor<f32>>> {
    if entries.len() != expected.params.len() {
        return Err(malformed(format!(
            "{} tensors listed, model has {}",
            entries.len(),
            expected.params.len()
        )));
    }
    entries
        .iter()
        .zip(expected.params.iter())
        .map(|(e, (_, name, t))| {
            if e.name != name || e.shape != t.shape() {
                return Err(malformed(format!(
                    "entry {} {:?} does not match model parameter {name} {:?}",
                    e.name,
                    e.shape,
                    t.shape()
                )));
            }
            if e.offset != *cursor || e.count != t.len() {
                return Err(malformed(format!(
                    "entry {} at offset {} with {} values breaks the contiguous layout",
                    e.name, e.offset, e.count
                )));
            }
            let end = e.offset + 4 * e.count;
            let bytes = blob
                .get(e.offset..end)
                .ok_or_else(|| malformed(format!("blob ends before entry {}", e.name)))?;
            *cursor = end;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            Tensor::new(&e.shape, data)
        })
        .collect()
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| malformed("no manifest line"))?;
    let manifest: Manifest =
        serde_json::from_slice(&bytes[..split]).map_err(|e| malformed(format!("manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(malformed(format!(
            "format version {} (supported: {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    let config = RunConfig::from_json(&manifest.config.to_string())?;
    let mut model = OctufModel::<f32>::new(config.model(), config.seed)?;
    let blob = &bytes[split + 1..];
    let mut cursor = 0;
    let params = read_tensors(&manifest.params, &model, blob, &mut cursor)?;
    for (i, t) in params.into_iter().enumerate() {
        model.params.tensors_mut()[i] = t;
    }
    let optimizer = match &manifest.optimizer {
        None => None,
        Some(o) => {
            let first = read_tensors(&o.first, &model, blob, &mut cursor)?;
            let second = read_tensors(&o.second, &model, blob, &mut cursor)?;
            Some(AdamState {
                config: AdamConfig {
                    beta1: o.beta1,
                    beta2: o.beta2,
                    eps: o.eps,
                },
                first,
                second,
                step: o.step,
            })
        }
    };
    if cursor != blob.len() {
        return Err(malformed(format!(
            "blob holds {} bytes, manifest accounts for {cursor}",
            blob.len()
        )));
    }
    Ok(Checkpoint {
        config,
        model,
        optimizer,
    })
}
