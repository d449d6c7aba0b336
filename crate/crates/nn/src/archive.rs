//! Single-file archive of named tensors plus a JSON header.
//!
//! Layout (little endian):
//!
//! ```text
//! magic   8 bytes  "NADAPT\0\x01"
//! version u32
//! header  u64 length + UTF-8 JSON
//! count   u64
//! entries count × { name: u32 len + UTF-8, ndim: u32, dims: ndim × u64, data: Π dims × f64 }
//! ```
//!
//! Values are stored as `f64`, which round-trips `f32` exactly.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{ArrayD, IxDyn};

use crate::{Float, Layer, NnError, Result, StateMut, StateRef};

pub const MAGIC: &[u8; 8] = b"NADAPT\0\x01";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Archive {
    pub header: serde_json::Value,
    pub tensors: BTreeMap<String, ArrayD<f64>>,
}

impl Archive {
    pub fn new(header: serde_json::Value) -> Self {
        Self {
            header,
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert<T: Float>(&mut self, name: impl Into<String>, value: &ArrayD<T>) {
        self.tensors.insert(name.into(), value.mapv(|v| v.f64()));
    }

    pub fn get<T: Float>(&self, name: &str) -> Result<ArrayD<T>> {
        self.tensors
            .get(name)
            .map(|a| a.mapv(T::of))
            .ok_or_else(|| NnError::Format(format!("missing tensor {name:?}")))
    }

    /// Stores every parameter value and buffer of `layer` under `prefix`.
    pub fn store_layer<T: Float>(&mut self, prefix: &str, layer: &dyn Layer<T>) {
        layer.visit(prefix, &mut |name, s| {
            let a = match s {
                StateRef::Param(p) => &p.value,
                StateRef::Buffer(b) => b,
            };
            self.insert(name, a);
        });
    }

    /// Restores every parameter and buffer of `layer`; shapes must match.
    pub fn restore_layer<T: Float>(&self, prefix: &str, layer: &mut dyn Layer<T>) -> Result<()> {
        let mut err = None;
        layer.visit_mut(prefix, &mut |name, mut s| {
            if err.is_some() {
                return;
            }
            let dst = s.array_mut();
            match self.tensors.get(name) {
                None => err = Some(NnError::Format(format!("missing tensor {name:?}"))),
                Some(src) if src.shape() != dst.shape() => {
                    err = Some(NnError::Shape(format!(
                        "{name}: stored {:?}, model {:?}",
                        src.shape(),
                        dst.shape()
                    )))
                }
                Some(src) => dst.zip_mut_with(src, |d, &v| *d = T::of(v)),
            }
            if let StateMut::Param(p) = s {
                p.zero_grad();
            }
        });
        err.map_or(Ok(()), Err)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        let header = serde_json::to_vec(&self.header).map_err(|e| NnError::Format(e.to_string()))?;
        w.write_u64::<LittleEndian>(header.len() as u64)?;
        w.write_all(&header)?;
        w.write_u64::<LittleEndian>(self.tensors.len() as u64)?;
        for (name, t) in &self.tensors {
            w.write_u32::<LittleEndian>(name.len() as u32)?;
            w.write_all(name.as_bytes())?;
            w.write_u32::<LittleEndian>(t.ndim() as u32)?;
            for &d in t.shape() {
                w.write_u64::<LittleEndian>(d as u64)?;
            }
            for &v in t.iter() {
                w.write_f64::<LittleEndian>(v)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(NnError::Format("not a checkpoint archive (bad magic)".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(NnError::Format(format!(
                "unsupported archive version {version} (expected {VERSION})"
            )));
        }
        let hlen = r.read_u64::<LittleEndian>()? as usize;
        let mut hbuf = vec![0u8; hlen];
        r.read_exact(&mut hbuf)?;
        let header = serde_json::from_slice(&hbuf).map_err(|e| NnError::Format(e.to_string()))?;
        let count = r.read_u64::<LittleEndian>()?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let nlen = r.read_u32::<LittleEndian>()? as usize;
            let mut nbuf = vec![0u8; nlen];
            r.read_exact(&mut nbuf)?;
            let name = String::from_utf8(nbuf).map_err(|e| NnError::Format(e.to_string()))?;
            let ndim = r.read_u32::<LittleEndian>()? as usize;
            let dims = (0..ndim)
                .map(|_| r.read_u64::<LittleEndian>().map(|d| d as usize))
                .collect::<std::io::Result<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            let mut data = vec![0.0; n];
            r.read_f64_into::<LittleEndian>(&mut data)?;
            let arr = ArrayD::from_shape_vec(IxDyn(&dims), data).map_err(|e| NnError::Format(e.to_string()))?;
            tensors.insert(name, arr);
        }
        Ok(Self { header, tensors })
    }

    /// Writes to a temporary sibling file and renames it into place.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        {
            let mut w = BufWriter::new(fs::File::create(&tmp)?);
            self.write_to(&mut w)?;
            w.flush()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(fs::File::open(path)?))
    }
}
