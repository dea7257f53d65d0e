//! The `RNLW` weight container.
//!
//! Layout, all integers little-endian: magic `RNLW`, u32 version (1), u32
//! tensor count, then per tensor a u16 name length, the UTF-8 name, a u8
//! dtype code (0 = f32), a u8 rank, `rank` u64 extents and the f32 payload.
//! Tensors are written sorted by name.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};

use thiserror::Error;

use crate::graph::{Graph, WeightStore};
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"RNLW";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("not a weight container (magic {0:?})")]
    Magic([u8; 4]),

    #[error("unsupported container version {0}")]
    Version(u32),

    #[error("tensor `{name}`: unsupported dtype code {code}")]
    Dtype { name: String, code: u8 },

    #[error("tensor `{name}`: rank {rank} exceeds 4")]
    Rank { name: String, rank: u8 },

    #[error("duplicate tensor name `{0}`")]
    Duplicate(String),

    #[error("tensor name is not UTF-8")]
    Name,

    #[error("tensor `{0}` is too large")]
    Size(String),

    #[error("container is truncated")]
    Truncated,

    #[error("unresolved weights: {}", .0.join(", "))]
    Unresolved(Vec<String>),

    #[error(transparent)]
    Io(io::Error),
}

impl From<io::Error> for ContainerError {
    fn from(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            ContainerError::Truncated
        } else {
            ContainerError::Io(e)
        }
    }
}

type Result<T> = std::result::Result<T, ContainerError>;

/// One stored tensor with its declared extents.
#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub extents: Vec<u64>,
    pub data: Vec<f32>,
}

impl Entry {
    /// The engine's 4-d view: extents left-padded with 1s.
    pub fn to_tensor(&self) -> Tensor {
        let mut dims = [1usize; 4];
        let rank = self.extents.len();
        for (i, &e) in self.extents.iter().enumerate() {
            dims[4 - rank + i] = e as usize;
        }
        Tensor::from_vec(Shape::from(dims), self.data.clone()).expect("payload sized from extents")
    }
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Reads every tensor with its original rank.
pub fn read_entries<R: Read>(mut r: R) -> Result<BTreeMap<String, Entry>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ContainerError::Magic(magic));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(ContainerError::Version(version));
    }
    let count = read_u32(&mut r)?;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let len = read_u16(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| ContainerError::Name)?;
        let code = read_u8(&mut r)?;
        if code != DTYPE_F32 {
            return Err(ContainerError::Dtype { name, code });
        }
        let rank = read_u8(&mut r)?;
        if rank > 4 {
            return Err(ContainerError::Rank { name, rank });
        }
        let extents = (0..rank).map(|_| read_u64(&mut r)).collect::<Result<Vec<_>>>()?;
        let numel = extents
            .iter()
            .try_fold(1u64, |acc, &e| acc.checked_mul(e))
            .filter(|&n| n <= (isize::MAX as u64) / 4)
            .ok_or_else(|| ContainerError::Size(name.clone()))? as usize;
        let mut bytes = vec![0u8; numel * 4];
        r.read_exact(&mut bytes)?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        if out.insert(name.clone(), Entry { extents, data }).is_some() {
            return Err(ContainerError::Duplicate(name));
        }
    }
    Ok(out)
}

pub fn read_container<R: Read>(r: R) -> Result<WeightStore> {
    Ok(read_entries(r)?.into_iter().map(|(k, e)| (k, e.to_tensor())).collect())
}

/// Reads a container and checks that it supplies every weight `graph`
/// needs, with the right shapes. Extra tensors are ignored.
pub fn load_for_graph<R: Read>(r: R, graph: &Graph) -> std::result::Result<WeightStore, LoadError> {
    let store = read_container(r)?;
    let missing = store.missing(graph);
    if !missing.is_empty() {
        return Err(ContainerError::Unresolved(missing).into());
    }
    store.validate(graph)?;
    Ok(store)
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error(transparent)]
    Container(#[from] ContainerError),

    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
}

/// Writes entries sorted by name.
pub fn write_entries<W: Write>(mut w: W, entries: &BTreeMap<String, Entry>) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, e) in entries {
        let len = u16::try_from(name.len()).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "name too long"))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[DTYPE_F32, e.extents.len() as u8])?;
        for &d in &e.extents {
            w.write_all(&d.to_le_bytes())?;
        }
        for &v in &e.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Writes a store with every tensor at rank 4.
pub fn write_container<W: Write>(w: W, store: &WeightStore) -> io::Result<()> {
    let entries = store
        .iter()
        .map(|(k, t)| {
            let extents = t.shape().dims().iter().map(|&d| d as u64).collect();
            (k.to_string(), Entry { extents, data: t.data().to_vec() })
        })
        .collect();
    write_entries(w, &entries)
}
