//! Binary weight files.
//!
//! Layout (all integers little-endian `u32`, floats little-endian `f32`):
//!
//! ```text
//! "GWGT"                      4-byte magic
//! version                     currently 1
//! meta_len, meta[meta_len]    UTF-8 `key=value` lines
//! count                       number of tensor records
//! count x record:
//!     name_len, name[name_len]    UTF-8
//!     ndim, dims[ndim]
//!     data[prod(dims)]            row-major f32
//! ```

use std::io::{self, Read, Write};

use thiserror::Error;

use super::{ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"GWGT";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a weight file (bad magic)")]
    BadMagic,
    #[error("unsupported weight file version {0}")]
    Version(u32),
    #[error("malformed weight file: {0}")]
    Format(String),
    #[error("parameter {0} missing from weight file")]
    Missing(String),
    #[error("parameter {name}: stored shape {stored:?}, model expects {expected:?}")]
    Shape {
        name: String,
        stored: Vec<usize>,
        expected: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub metadata: String,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

fn put_u32(w: &mut impl Write, x: usize) -> Result<(), CheckpointError> {
    let x = u32::try_from(x).map_err(|_| CheckpointError::Format(format!("{x} exceeds u32")))?;
    w.write_all(&x.to_le_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_string(r: &mut impl Read) -> Result<String, CheckpointError> {
    let n = get_u32(r)? as usize;
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| CheckpointError::Format("non-UTF-8 text".into()))
}

pub fn write_checkpoint(
    w: &mut impl Write,
    metadata: &str,
    store: &ParamStore<f32>,
) -> Result<(), CheckpointError> {
    w.write_all(MAGIC)?;
    put_u32(w, VERSION as usize)?;
    put_u32(w, metadata.len())?;
    w.write_all(metadata.as_bytes())?;
    put_u32(w, store.len())?;
    for (_, p) in store.iter() {
        put_u32(w, p.name.len())?;
        w.write_all(p.name.as_bytes())?;
        put_u32(w, p.value.shape().len())?;
        for &d in p.value.shape() {
            put_u32(w, d)?;
        }
        for &x in p.value.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Checkpoint, CheckpointError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = get_u32(r)?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let metadata = get_string(r)?;
    let count = get_u32(r)? as usize;
    let mut tensors = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name = get_string(r)?;
        let ndim = get_u32(r)? as usize;
        if ndim > 4 {
            return Err(CheckpointError::Format(format!("{name}: {ndim} axes")));
        }
        let shape = (0..ndim)
            .map(|_| get_u32(r).map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let t = Tensor::from_vec(&shape, data).map_err(|e| CheckpointError::Format(e.to_string()))?;
        tensors.push((name, t));
    }
    Ok(Checkpoint { metadata, tensors })
}

impl Checkpoint {
    /// Copies stored tensors into `store`, matching by name and shape. Every
    /// parameter in `store` must be present.
    pub fn load_into(&self, store: &mut ParamStore<f32>) -> Result<(), CheckpointError> {
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let p = store.get_mut(id);
            let (_, t) = self
                .tensors
                .iter()
                .find(|(n, _)| *n == p.name)
                .ok_or_else(|| CheckpointError::Missing(p.name.clone()))?;
            if t.shape() != p.value.shape() {
                return Err(CheckpointError::Shape {
                    name: p.name.clone(),
                    stored: t.shape().to_vec(),
                    expected: p.value.shape().to_vec(),
                });
            }
            p.value = t.clone();
        }
        Ok(())
    }
}
