//! Named-array binary container used for dataset caches and checkpoints.
//!
//! Layout: 8-byte magic, little-endian `u64` manifest length, the manifest
//! as JSON, then every array's raw little-endian bytes in manifest order.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"IBARR001";

#[derive(Clone, Debug, PartialEq)]
pub enum ArrayData {
    F64(Vec<f64>),
    F32(Vec<f32>),
    I64(Vec<i64>),
    U64(Vec<u64>),
    U32(Vec<u32>),
    U8(Vec<u8>),
}

impl ArrayData {
    fn dtype(&self) -> &'static str {
        match self {
            ArrayData::F64(_) => "f64",
            ArrayData::F32(_) => "f32",
            ArrayData::I64(_) => "i64",
            ArrayData::U64(_) => "u64",
            ArrayData::U32(_) => "u32",
            ArrayData::U8(_) => "u8",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ArrayData::F64(v) => v.len(),
            ArrayData::F32(v) => v.len(),
            ArrayData::I64(v) => v.len(),
            ArrayData::U64(v) => v.len(),
            ArrayData::U32(v) => v.len(),
            ArrayData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn write_le(&self, out: &mut Vec<u8>) {
        macro_rules! put {
            ($v:expr) => {
                for x in $v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            };
        }
        match self {
            ArrayData::F64(v) => put!(v),
            ArrayData::F32(v) => put!(v),
            ArrayData::I64(v) => put!(v),
            ArrayData::U64(v) => put!(v),
            ArrayData::U32(v) => put!(v),
            ArrayData::U8(v) => out.extend_from_slice(v),
        }
    }

    fn read_le(dtype: &str, bytes: &[u8]) -> Result<Self> {
        macro_rules! get {
            ($t:ty, $variant:ident) => {{
                const W: usize = std::mem::size_of::<$t>();
                if bytes.len() % W != 0 {
                    return Err(Error::Format(format!(
                        "{} bytes is not a whole number of {}",
                        bytes.len(),
                        dtype
                    )));
                }
                ArrayData::$variant(
                    bytes
                        .chunks_exact(W)
                        .map(|c| <$t>::from_le_bytes(c.try_into().expect("chunk width")))
                        .collect(),
                )
            }};
        }
        Ok(match dtype {
            "f64" => get!(f64, F64),
            "f32" => get!(f32, F32),
            "i64" => get!(i64, I64),
            "u64" => get!(u64, U64),
            "u32" => get!(u32, U32),
            "u8" => ArrayData::U8(bytes.to_vec()),
            other => return Err(Error::Format(format!("unknown dtype `{other}`"))),
        })
    }

    fn byte_width(&self) -> usize {
        match self {
            ArrayData::F64(_) | ArrayData::I64(_) | ArrayData::U64(_) => 8,
            ArrayData::F32(_) | ArrayData::U32(_) => 4,
            ArrayData::U8(_) => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: usize,
    bytes: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    meta: serde_json::Value,
    arrays: Vec<Entry>,
}

/// An ordered set of named, shape-tagged arrays plus free-form metadata.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ArrayStore {
    pub meta: serde_json::Value,
    arrays: BTreeMap<String, NamedArray>,
}

impl ArrayStore {
    pub fn new(meta: serde_json::Value) -> Self {
        Self {
            meta,
            arrays: BTreeMap::new(),
        }
    }

    pub fn insert(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        data: ArrayData,
    ) -> Result<()> {
        let name = name.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension(format!(
                "array `{name}` has {} values for shape {shape:?}",
                data.len()
            )));
        }
        self.arrays.insert(name, NamedArray { shape, data });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&NamedArray> {
        self.arrays
            .get(name)
            .ok_or_else(|| Error::Format(format!("missing array `{name}`")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.arrays.keys().map(String::as_str)
    }

    pub fn f64(&self, name: &str) -> Result<&[f64]> {
        match &self.get(name)?.data {
            ArrayData::F64(v) => Ok(v),
            other => Err(Error::Format(format!(
                "array `{name}` is {}, expected f64",
                other.dtype()
            ))),
        }
    }

    pub fn i64(&self, name: &str) -> Result<&[i64]> {
        match &self.get(name)?.data {
            ArrayData::I64(v) => Ok(v),
            other => Err(Error::Format(format!(
                "array `{name}` is {}, expected i64",
                other.dtype()
            ))),
        }
    }

    pub fn u32(&self, name: &str) -> Result<&[u32]> {
        match &self.get(name)?.data {
            ArrayData::U32(v) => Ok(v),
            other => Err(Error::Format(format!(
                "array `{name}` is {}, expected u32",
                other.dtype()
            ))),
        }
    }

    pub fn u8(&self, name: &str) -> Result<&[u8]> {
        match &self.get(name)?.data {
            ArrayData::U8(v) => Ok(v),
            other => Err(Error::Format(format!(
                "array `{name}` is {}, expected u8",
                other.dtype()
            ))),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.arrays.len());
        let mut offset = 0;
        for (name, a) in &self.arrays {
            let bytes = a.data.len() * a.data.byte_width();
            entries.push(Entry {
                name: name.clone(),
                dtype: a.data.dtype().to_string(),
                shape: a.shape.clone(),
                offset,
                bytes,
            });
            offset += bytes;
        }
        let manifest = serde_json::to_vec(&Manifest {
            meta: self.meta.clone(),
            arrays: entries,
        })?;
        let mut out = Vec::with_capacity(16 + manifest.len() + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for a in self.arrays.values() {
            a.data.write_le(&mut out);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Format("not an array container (bad magic)".into()));
        }
        let mlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = 16usize
            .checked_add(mlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Format("truncated manifest".into()))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[16..body])?;
        let payload = &bytes[body..];
        let mut store = ArrayStore::new(manifest.meta);
        for e in manifest.arrays {
            let end = e
                .offset
                .checked_add(e.bytes)
                .filter(|&x| x <= payload.len());
            let end = end.ok_or_else(|| {
                Error::Format(format!("array `{}` runs past end of file", e.name))
            })?;
            let data = ArrayData::read_le(&e.dtype, &payload[e.offset..end])?;
            store.insert(e.name, e.shape, data)?;
        }
        Ok(store)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Writes to a sibling temporary file and renames it into place.
    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }
}

/// Writes `bytes` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
