//! Checkpoint container: a small binary tensor file plus a JSON sidecar.
//!
//! Binary layout (all integers little-endian):
//!   magic `OGCK`, u32 version, u32 tensor count, then per tensor:
//!   u32 name length, name bytes (UTF-8), u32 rank, u64 dims..., f32 payload
//!   in row-major order. The sidecar (`<file>.json`) carries config and
//!   training metrics as free-form JSON.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array, ArrayD, Dimension, IxDyn};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"OGCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported version {0}")]
    BadVersion(u32),
    #[error("malformed tensor entry: {0}")]
    Malformed(String),
    #[error("missing tensor {0:?}")]
    MissingTensor(String),
    #[error("tensor {name:?} has shape {got:?}, expected {want:?}")]
    ShapeMismatch {
        name: String,
        got: Vec<usize>,
        want: Vec<usize>,
    },
    #[error("sidecar error: {0}")]
    Sidecar(#[from] serde_json::Error),
}

/// An ordered set of named f32 tensors.
#[derive(Debug, Clone, Default)]
pub struct Checkpoint {
    tensors: BTreeMap<String, ArrayD<f32>>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert<D: Dimension>(&mut self, name: &str, tensor: &Array<f32, D>) {
        self.tensors
            .insert(name.to_string(), tensor.to_owned().into_dyn());
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, name: &str) -> Result<&ArrayD<f32>, CheckpointError> {
        self.tensors
            .get(name)
            .ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))
    }

    /// Fetch a tensor and check its shape in one go.
    pub fn get_shaped<D: Dimension>(
        &self,
        name: &str,
        dim: D,
    ) -> Result<Array<f32, D>, CheckpointError> {
        let t = self.get(name)?;
        if t.shape() != dim.slice() {
            return Err(CheckpointError::ShapeMismatch {
                name: name.to_string(),
                got: t.shape().to_vec(),
                want: dim.slice().to_vec(),
            });
        }
        Ok(t.to_owned().into_dimensionality::<D>().unwrap())
    }

    /// FNV-1a over the byte representation of every tensor, in name order.
    /// Used to enforce that frozen weights really stay frozen.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for (name, t) in &self.tensors {
            eat(name.as_bytes());
            for d in t.shape() {
                eat(&(*d as u64).to_le_bytes());
            }
            for v in t.iter() {
                eat(&v.to_le_bytes());
            }
        }
        h
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u32::<LittleEndian>(self.tensors.len() as u32)?;
        for (name, t) in &self.tensors {
            w.write_u32::<LittleEndian>(name.len() as u32)?;
            w.write_all(name.as_bytes())?;
            w.write_u32::<LittleEndian>(t.ndim() as u32)?;
            for d in t.shape() {
                w.write_u64::<LittleEndian>(*d as u64)?;
            }
            for v in t.iter() {
                w.write_f32::<LittleEndian>(*v)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(CheckpointError::BadVersion(version));
        }
        let count = r.read_u32::<LittleEndian>()?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let name_len = r.read_u32::<LittleEndian>()? as usize;
            if name_len > 4096 {
                return Err(CheckpointError::Malformed("name too long".into()));
            }
            let mut name_buf = vec![0u8; name_len];
            r.read_exact(&mut name_buf)?;
            let name = String::from_utf8(name_buf)
                .map_err(|_| CheckpointError::Malformed("name not UTF-8".into()))?;
            let rank = r.read_u32::<LittleEndian>()? as usize;
            if rank > 8 {
                return Err(CheckpointError::Malformed(format!("rank {rank} too large")));
            }
            let mut dims = Vec::with_capacity(rank);
            let mut numel: usize = 1;
            for _ in 0..rank {
                let d = r.read_u64::<LittleEndian>()? as usize;
                numel = numel
                    .checked_mul(d)
                    .ok_or_else(|| CheckpointError::Malformed("dims overflow".into()))?;
                dims.push(d);
            }
            let mut data = vec![0f32; numel];
            r.read_f32_into::<LittleEndian>(&mut data)?;
            let t = ArrayD::from_shape_vec(IxDyn(&dims), data)
                .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
            tensors.insert(name, t);
        }
        Ok(Self { tensors })
    }

    /// Write the JSON sidecar next to a checkpoint path (`<path>.json`).
    pub fn save_sidecar(path: &Path, sidecar: &serde_json::Value) -> Result<(), CheckpointError> {
        let side = sidecar_path(path);
        let mut f = BufWriter::new(File::create(side)?);
        serde_json::to_writer_pretty(&mut f, sidecar)?;
        f.write_all(b"\n")?;
        f.flush()?;
        Ok(())
    }

    pub fn load_sidecar(path: &Path) -> Result<serde_json::Value, CheckpointError> {
        let side = sidecar_path(path);
        let f = BufReader::new(File::open(side)?);
        Ok(serde_json::from_reader(f)?)
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    std::path::PathBuf::from(os)
}
