//! Binary parameter checkpoints.
//!
//! Layout (little endian):
//! ```text
//! magic "ZIANCKPT" | u32 version | u32 header_len | header JSON
//! u32 entry_count | entries...
//! entry: u32 name_len | name utf-8 | u8 kind (0 trainable, 1 buffer)
//!        u32 rank | u32 dims[rank] | f32 values[prod(dims)]
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::{ParamKind, ParamStore};
use crate::real::{Precision, Real};
use crate::tensor::{numel, Tensor};

pub const MAGIC: &[u8; 8] = b"ZIANCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint is missing parameter `{0}`")]
    Missing(String),
    #[error("parameter `{name}`: checkpoint shape {found:?} does not match model shape {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub precision: Precision,
    pub seed: u64,
    pub config_hash: String,
    pub step: u64,
    /// Free-form metadata, typically the experiment configuration that produced the weights.
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

pub fn write_checkpoint<T: Real, W: Write>(
    mut w: W,
    header: &CheckpointHeader,
    store: &ParamStore<T>,
) -> Result<(), CheckpointError> {
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    let json = serde_json::to_vec(header)?;
    w.write_u32::<LittleEndian>(json.len() as u32)?;
    w.write_all(&json)?;
    w.write_u32::<LittleEndian>(store.len() as u32)?;
    for (_, name, kind, tensor) in store.iter() {
        w.write_u32::<LittleEndian>(name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        w.write_u8(match kind {
            ParamKind::Trainable => 0,
            ParamKind::Buffer => 1,
        })?;
        w.write_u32::<LittleEndian>(tensor.rank() as u32)?;
        for &d in tensor.shape() {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        for &v in tensor.data() {
            w.write_f32::<LittleEndian>(v.as_f64() as f32)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(CheckpointHeader, Vec<CheckpointEntry>), CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let len = r.read_u32::<LittleEndian>()? as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: CheckpointHeader = serde_json::from_slice(&json)?;
    let count = r.read_u32::<LittleEndian>()?;
    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let nlen = r.read_u32::<LittleEndian>()? as usize;
        let mut name = vec![0u8; nlen];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let kind = match r.read_u8()? {
            0 => ParamKind::Trainable,
            1 => ParamKind::Buffer,
            k => return Err(CheckpointError::Malformed(format!("unknown entry kind {k} for `{name}`"))),
        };
        let rank = r.read_u32::<LittleEndian>()? as usize;
        let shape = (0..rank)
            .map(|_| r.read_u32::<LittleEndian>().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let mut values = vec![0f32; numel(&shape)];
        r.read_f32_into::<LittleEndian>(&mut values)?;
        entries.push(CheckpointEntry {
            name,
            kind,
            shape,
            values,
        });
    }
    Ok((header, entries))
}

pub fn save_checkpoint<T: Real>(
    path: impl AsRef<Path>,
    header: &CheckpointHeader,
    store: &ParamStore<T>,
) -> Result<(), CheckpointError> {
    write_checkpoint(BufWriter::new(File::create(path)?), header, store)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(CheckpointHeader, Vec<CheckpointEntry>), CheckpointError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

/// Overwrite every entry of `store` with the matching checkpoint entry.
pub fn restore<T: Real>(store: &mut ParamStore<T>, entries: &[CheckpointEntry]) -> Result<(), CheckpointError> {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = store.name(id).to_string();
        let entry = entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| CheckpointError::Missing(name.clone()))?;
        let tensor = store.get_mut(id);
        if entry.shape != tensor.shape() {
            return Err(CheckpointError::Shape {
                name,
                expected: tensor.shape().to_vec(),
                found: entry.shape.clone(),
            });
        }
        for (dst, &src) in tensor.data_mut().iter_mut().zip(&entry.values) {
            *dst = T::of(src as f64);
        }
    }
    Ok(())
}

/// Entries as a fresh store (kinds preserved).
pub fn entries_to_store<T: Real>(entries: &[CheckpointEntry]) -> Result<ParamStore<T>, CheckpointError> {
    let mut store = ParamStore::new();
    for e in entries {
        let t = Tensor::new(e.shape.clone(), e.values.iter().map(|&v| T::of(v as f64)).collect())
            .map_err(|err| CheckpointError::Malformed(err.to_string()))?;
        store
            .add(e.name.clone(), t, e.kind)
            .map_err(|err| CheckpointError::Malformed(err.to_string()))?;
    }
    Ok(store)
}
