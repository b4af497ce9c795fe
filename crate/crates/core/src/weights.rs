//! Named-tensor weight container used for checkpoints and pretrained-weight
//! import. Layout: magic, tensor count, then a header entry per tensor
//! (name, shape, dtype, payload offset) followed by the raw little-endian
//! f32 payloads.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use thiserror::Error;

const MAGIC: &[u8; 4] = b"NTC1";
const DTYPE_F32: u8 = 0;

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("malformed weight file {path}: {detail}")]
    Format { path: String, detail: String },

    #[error("weight file {path} is missing tensor '{name}'")]
    Missing { path: String, name: String },

    #[error("tensor '{name}' has shape {got:?}, expected {expected:?}")]
    Shape {
        name: String,
        got: Vec<usize>,
        expected: Vec<usize>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, WeightsError>;

/// One named tensor; values are held as f64 in memory and stored as f32.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl TensorEntry {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        let entry = Self {
            name: name.into(),
            shape,
            data,
        };
        assert_eq!(
            entry.shape.iter().product::<usize>(),
            entry.data.len(),
            "shape/data mismatch for '{}'",
            entry.name
        );
        entry
    }
}

/// An ordered collection of named tensors.
#[derive(Debug, Clone, Default)]
pub struct Container {
    pub entries: Vec<TensorEntry>,
}

impl Container {
    pub fn get(&self, name: &str) -> Option<&TensorEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn require(&self, path: &Path, name: &str) -> Result<&TensorEntry> {
        self.get(name).ok_or_else(|| WeightsError::Missing {
            path: path.display().to_string(),
            name: name.into(),
        })
    }
}

pub fn save(container: &Container, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut header = Vec::new();
    let mut payload = Vec::new();
    header.extend_from_slice(MAGIC);
    header.extend_from_slice(&(container.entries.len() as u32).to_le_bytes());
    for entry in &container.entries {
        let name = entry.name.as_bytes();
        header.extend_from_slice(&(name.len() as u16).to_le_bytes());
        header.extend_from_slice(name);
        header.push(entry.shape.len() as u8);
        for &dim in &entry.shape {
            header.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        header.push(DTYPE_F32);
        header.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        for &v in &entry.data {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let mut file = fs::File::create(path).map_err(|source| WeightsError::Io {
        path: path.display().to_string(),
        source,
    })?;
    file.write_all(&header)
        .and_then(|_| file.write_all(&payload))
        .map_err(|source| WeightsError::Io {
            path: path.display().to_string(),
            source,
        })
}

pub fn load(path: impl AsRef<Path>) -> Result<Container> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| WeightsError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let err = |detail: &str| WeightsError::Format {
        path: path.display().to_string(),
        detail: detail.into(),
    };

    if bytes.len() < 8 || &bytes[0..4] != MAGIC {
        return Err(err("missing magic"));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let mut off = 8;
    let mut pending: Vec<(String, Vec<usize>, usize)> = Vec::with_capacity(count);
    for _ in 0..count {
        let take = |off: &mut usize, n: usize| -> Result<&[u8]> {
            let slice = bytes
                .get(*off..*off + n)
                .ok_or_else(|| err("truncated header"))?;
            *off += n;
            Ok(slice)
        };
        let name_len = u16::from_le_bytes(take(&mut off, 2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut off, name_len)?.to_vec())
            .map_err(|_| err("tensor name is not UTF-8"))?;
        let ndim = take(&mut off, 1)?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap()) as usize);
        }
        let dtype = take(&mut off, 1)?[0];
        if dtype != DTYPE_F32 {
            return Err(err(&format!("unsupported dtype {dtype}")));
        }
        let offset = u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap()) as usize;
        pending.push((name, shape, offset));
    }

    let payload = &bytes[off..];
    let mut entries = Vec::with_capacity(count);
    for (name, shape, offset) in pending {
        let len: usize = shape.iter().product();
        let end = offset + len * 4;
        let slice = payload
            .get(offset..end)
            .ok_or_else(|| err(&format!("payload for '{name}' out of bounds")))?;
        let data = slice
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        entries.push(TensorEntry { name, shape, data });
    }
    Ok(Container { entries })
}
