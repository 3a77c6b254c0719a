//! Parameter snapshot container.
//!
//! Binary layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "PSNP"
//! version u32      1
//! count   u32      number of tensors
//! per tensor:
//!   name_len u32, name bytes (UTF-8)
//!   ndim     u32, dims [u64; ndim]
//!   payload  f64 little-endian, prod(dims) values
//! ```
//!
//! A JSON sidecar `<file>.json` describes the layout (tensor names, shapes,
//! free-form metadata) so snapshots stay inspectable without this crate.
//! Payloads are always f64 regardless of the in-memory scalar type.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::array::DenseArray;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PSNP";
const VERSION: u32 = 1;

#[derive(Clone, Debug, Default)]
pub struct Snapshot {
    pub tensors: Vec<(String, DenseArray<f64>)>,
    pub meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct SidecarTensor {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format: String,
    dtype: String,
    tensors: Vec<SidecarTensor>,
    meta: serde_json::Value,
}

fn sidecar_path(bin: &Path) -> PathBuf {
    let mut p = bin.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

pub fn write_snapshot(path: &Path, snapshot: &Snapshot) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(snapshot.tensors.len() as u32).to_le_bytes());
    for (name, arr) in &snapshot.tensors {
        let bytes = name.as_bytes();
        buf.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
        buf.extend_from_slice(bytes);
        buf.extend_from_slice(&(arr.shape().len() as u32).to_le_bytes());
        for &d in arr.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in arr.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;

    let sidecar = Sidecar {
        format: "psnp-v1".into(),
        dtype: "f64".into(),
        tensors: snapshot
            .tensors
            .iter()
            .map(|(name, arr)| SidecarTensor {
                name: name.clone(),
                shape: arr.shape().to_vec(),
            })
            .collect(),
        meta: snapshot.meta.clone(),
    };
    let json =
        serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Serialization(e.to_string()))?;
    fs::write(sidecar_path(path), json)?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut off = 0usize;
    let take = |off: &mut usize, n: usize| -> Result<&[u8]> {
        if *off + n > bytes.len() {
            return Err(Error::Serialization("snapshot truncated".into()));
        }
        let s = &bytes[*off..*off + n];
        *off += n;
        Ok(s)
    };
    if take(&mut off, 4)? != MAGIC {
        return Err(Error::Serialization("bad snapshot magic".into()));
    }
    let version = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Serialization(format!(
            "unsupported snapshot version {}",
            version
        )));
    }
    let count = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap());
    let mut tensors = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut off, name_len)?.to_vec())
            .map_err(|e| Error::Serialization(e.to_string()))?;
        let ndim = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap()) as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap()));
        }
        tensors.push((name, DenseArray::from_vec(&shape, data)?));
    }
    let meta = match fs::read_to_string(sidecar_path(path)) {
        Ok(json) => {
            let sidecar: Sidecar =
                serde_json::from_str(&json).map_err(|e| Error::Serialization(e.to_string()))?;
            sidecar.meta
        }
        Err(_) => serde_json::Value::Null,
    };
    Ok(Snapshot { tensors, meta })
}
