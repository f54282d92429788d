//! Binary parameter files.
//!
//! Layout: `b"NEL1"`, a little-endian `u32` byte length followed by that
//! many bytes of UTF-8 JSON metadata, the raw little-endian tensor data in
//! registry order, and a little-endian CRC-32 of the data section.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{DType, Scalar, Shape, Tensor};
use crate::unet::{InputNorm, Model, ParamEntry, UNetSpec};

pub const MAGIC: &[u8; 4] = b"NEL1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub version: u32,
    pub in_channels: usize,
    pub base_width: usize,
    pub dtype: DType,
    #[serde(default)]
    pub input_norm: InputNorm,
    pub registry: Vec<ParamEntry>,
}

/// Serializes `meta` and `tensors` into the container layout.
pub fn encode<M: Serialize, T: Scalar>(meta: &M, tensors: &[Tensor<T>]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(meta)?;
    let len = u32::try_from(json.len()).map_err(|_| Error::Format("metadata too large".into()))?;
    let data_len: usize = tensors.iter().map(|t| t.numel() * T::DTYPE.size_of()).sum();
    let mut out = Vec::with_capacity(12 + json.len() + data_len);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    let data_start = out.len();
    for t in tensors {
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    let crc = crc32fast::hash(&out[data_start..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Splits a container into its metadata and verified data section.
pub fn decode<M: DeserializeOwned>(bytes: &[u8]) -> Result<(M, &[u8])> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing NEL1 magic".into()));
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let meta_end = 8usize
        .checked_add(len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| Error::Format("truncated metadata block".into()))?;
    let meta: M = serde_json::from_slice(&bytes[8..meta_end])
        .map_err(|e| Error::Format(format!("bad metadata json: {e}")))?;
    if bytes.len() < meta_end + 4 {
        return Err(Error::Format("truncated data section".into()));
    }
    Ok((meta, &bytes[meta_end..]))
}

/// Reads `entries` tensors out of a data section (data followed by CRC).
pub fn read_tensors<T: Scalar>(section: &[u8], shapes: &[[usize; 4]]) -> Result<Vec<Tensor<T>>> {
    let size = T::DTYPE.size_of();
    let expected: usize = shapes.iter().map(|s| s.iter().product::<usize>() * size).sum();
    if section.len() != expected + 4 {
        return Err(Error::Format(format!(
            "data section holds {} bytes, expected {}",
            section.len().saturating_sub(4),
            expected
        )));
    }
    let (data, crc) = section.split_at(expected);
    let stored = u32::from_le_bytes(crc.try_into().expect("4 bytes"));
    if crc32fast::hash(data) != stored {
        return Err(Error::Format("data checksum mismatch".into()));
    }
    let mut chunks = data.chunks_exact(size);
    shapes
        .iter()
        .map(|&shape| {
            let n = Shape(shape).numel();
            let values = chunks.by_ref().take(n).map(T::read_le).collect();
            Tensor::from_vec(shape, values)
        })
        .collect()
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn save_checkpoint<T: Scalar>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    let spec = model.spec();
    let meta = CheckpointMeta {
        version: FORMAT_VERSION,
        in_channels: spec.in_channels,
        base_width: spec.base_width,
        dtype: T::DTYPE,
        input_norm: spec.input_norm,
        registry: spec.registry.clone(),
    };
    write_file(path.as_ref(), &encode(&meta, model.params())?)
}

/// Reads only the metadata block.
pub fn read_checkpoint_meta(path: impl AsRef<Path>) -> Result<CheckpointMeta> {
    let bytes = read_file(path.as_ref())?;
    Ok(decode::<CheckpointMeta>(&bytes)?.0)
}

/// Loads a checkpoint into the architecture described by `spec`. The input
/// normalization always comes from the file.
pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>, spec: &UNetSpec) -> Result<Model<T>> {
    let bytes = read_file(path.as_ref())?;
    let (meta, section) = decode::<CheckpointMeta>(&bytes)?;
    if meta.version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {}", meta.version)));
    }
    if meta.dtype != T::DTYPE {
        return Err(Error::Compatibility(format!(
            "checkpoint dtype {} does not match requested {}",
            meta.dtype,
            T::DTYPE
        )));
    }
    if meta.in_channels != spec.in_channels || meta.base_width != spec.base_width {
        return Err(Error::Compatibility(format!(
            "checkpoint is in_channels={}, base_width={}; architecture is in_channels={}, base_width={}",
            meta.in_channels, meta.base_width, spec.in_channels, spec.base_width
        )));
    }
    check_registry(&meta.registry, &spec.registry)?;
    let shapes: Vec<[usize; 4]> = spec.registry.iter().map(|e| e.shape).collect();
    let params = read_tensors::<T>(section, &shapes)?;
    Model::from_params(spec.clone().with_input_norm(meta.input_norm), params)
}

/// Loads a checkpoint, deriving the architecture from its metadata.
pub fn load_checkpoint_auto<T: Scalar>(path: impl AsRef<Path>) -> Result<Model<T>> {
    let meta = read_checkpoint_meta(path.as_ref())?;
    let spec = UNetSpec::new(meta.in_channels, meta.base_width)?;
    load_checkpoint(path, &spec)
}

fn check_registry(found: &[ParamEntry], expected: &[ParamEntry]) -> Result<()> {
    for (i, exp) in expected.iter().enumerate() {
        match found.get(i) {
            Some(f) if f == exp => {}
            Some(f) => {
                return Err(Error::Compatibility(format!(
                    "entry {i}: file has {} {:?}, expected {} {:?}",
                    f.name,
                    Shape(f.shape),
                    exp.name,
                    Shape(exp.shape)
                )))
            }
            None => return Err(Error::Compatibility(format!("entry {i}: {} missing from file", exp.name))),
        }
    }
    if found.len() > expected.len() {
        return Err(Error::Compatibility(format!(
            "entry {}: unexpected {} in file",
            expected.len(),
            found[expected.len()].name
        )));
    }
    Ok(())
}
