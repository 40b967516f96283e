//! Named-tensor checkpoint files.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "CBGTCKPT"
//! 8       4     format version, u32 little-endian (currently 1)
//! 12      8     header length H in bytes, u64 little-endian
//! 20      H     UTF-8 JSON header (see `CheckpointHeader`)
//! 20+H    ...   tensor payloads in header order, row-major, little-endian
//!               elements of the header's dtype
//! ```
//!
//! Tensor names carry a prefix naming their owner: `encoder.` or `lstm.`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Encoder, EncoderConfig, LstmConfig, Model, ModelKind};
use crate::error::{Error, Result};
use crate::numerics::{DType, ParamStore, Scalar, Tensor};

pub const MAGIC: &[u8; 8] = b"CBGTCKPT";
pub const FORMAT_VERSION: u32 = 1;
const PREAMBLE: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelKind,
    pub encoder: EncoderConfig,
    pub lstm: Option<LstmConfig>,
    pub seed: u64,
    pub dtype: DType,
    pub tensors: Vec<TensorEntry>,
}

fn collect<T: Scalar>(model: &Model<T>) -> Vec<(String, &Tensor<T>)> {
    let mut out: Vec<(String, &Tensor<T>)> = model
        .encoder
        .params()
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (format!("encoder.{n}"), t))
        .collect();
    if let Some(l) = &model.lstm {
        out.extend(
            l.params()
                .named_tensors()
                .into_iter()
                .map(|(n, t)| (format!("lstm.{n}"), t)),
        );
    }
    out
}

/// Serializes `model` into the checkpoint byte layout.
pub fn to_bytes<T: Scalar>(model: &Model<T>) -> Result<Vec<u8>> {
    let tensors = collect(model);
    let header = CheckpointHeader {
        model: model.kind,
        encoder: model.encoder.config().clone(),
        lstm: model.lstm.as_ref().map(|l| *l.config()),
        seed: model.seed,
        dtype: T::DTYPE,
        tensors: tensors
            .iter()
            .map(|(n, t)| TensorEntry {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let payload: usize = tensors.iter().map(|(_, t)| t.len() * T::BYTES).sum();
    let mut out = Vec::with_capacity(PREAMBLE + json.len() + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in tensors {
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

pub fn save<T: Scalar>(model: &Model<T>, path: &Path) -> Result<()> {
    let bytes = to_bytes(model)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Parses only the header of a checkpoint file.
pub fn read_header(path: &Path) -> Result<CheckpointHeader> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_header(&bytes, path)?.0)
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<(CheckpointHeader, usize)> {
    let fmt = |offset: usize, message: String| Error::Format {
        file: path.to_path_buf(),
        offset: offset as u64,
        message,
    };
    if bytes.len() < PREAMBLE {
        return Err(fmt(bytes.len(), "file shorter than the checkpoint preamble".into()));
    }
    if &bytes[..8] != MAGIC {
        return Err(fmt(0, "bad magic, not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(fmt(8, format!("unsupported format version {version}")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let end = PREAMBLE
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| fmt(12, format!("header length {len} runs past end of file")))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[PREAMBLE..end]).map_err(|e| fmt(PREAMBLE, format!("bad header: {e}")))?;
    Ok((header, end))
}

/// Rebuilds a model from checkpoint bytes, converting precision if needed.
pub fn from_bytes<T: Scalar>(bytes: &[u8], path: &Path) -> Result<Model<T>> {
    let (header, mut offset) = parse_header(bytes, path)?;
    let encoder = Encoder::<T>::new(header.encoder.clone(), header.seed)?;
    let mut model = Model::new(header.model, encoder, header.seed)?;
    match (&model.lstm, &header.lstm) {
        (Some(l), Some(cfg)) if l.config() == cfg => {}
        (None, None) => {}
        _ => {
            return Err(Error::CheckpointMismatch(format!(
                "model kind {:?} does not match LSTM config {:?}",
                header.model, header.lstm
            )))
        }
    }
    let width = match header.dtype {
        DType::F32 => 4,
        DType::F64 => 8,
    };
    let expected = collect(&model).len();
    if header.tensors.len() != expected {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint has {} tensors, architecture needs {expected}",
            header.tensors.len()
        )));
    }
    for entry in &header.tensors {
        let numel: usize = entry.shape.iter().product();
        let end = offset + numel * width;
        if end > bytes.len() {
            return Err(Error::Format {
                file: path.to_path_buf(),
                offset: offset as u64,
                message: format!("payload for {:?} is truncated", entry.name),
            });
        }
        let chunk = &bytes[offset..end];
        let data: Vec<T> = match header.dtype {
            DType::F32 => chunk.chunks_exact(4).map(|c| T::lit(f32::read_le(c) as f64)).collect(),
            DType::F64 => chunk.chunks_exact(8).map(|c| T::lit(f64::read_le(c))).collect(),
        };
        let tensor = Tensor::new(entry.shape.clone(), data)?;
        let (owner, name) = entry.name.split_once('.').ok_or_else(|| {
            Error::CheckpointMismatch(format!("tensor name {:?} has no owner prefix", entry.name))
        })?;
        let store: &mut ParamStore<T> = match (owner, model.lstm.as_mut()) {
            ("encoder", _) => model.encoder.params_mut(),
            ("lstm", Some(l)) => l.params_mut(),
            _ => {
                return Err(Error::CheckpointMismatch(format!(
                    "unexpected tensor {:?}",
                    entry.name
                )))
            }
        };
        store.assign(name, tensor)?;
        offset = end;
    }
    if offset != bytes.len() {
        return Err(Error::Format {
            file: path.to_path_buf(),
            offset: offset as u64,
            message: format!("{} trailing bytes after the last tensor", bytes.len() - offset),
        });
    }
    Ok(model)
}

pub fn load<T: Scalar>(path: &Path) -> Result<Model<T>> {
    if !path.exists() {
        return Err(Error::MissingCheckpoint {
            what: "model".into(),
            path: path.to_path_buf(),
        });
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, path)
}
