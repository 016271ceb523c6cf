//! RVF: a minimal tensor container used for embedding caches and checkpoints.
//!
//! Layout:
//!
//! ```text
//! "RVF1" | u32 LE header length | UTF-8 JSON header | raw LE values, C order
//! ```
//!
//! The JSON header carries `dtype`, `shape`, `order` (always `"C"`) and a
//! free-form `metadata` object.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RVF1";

#[derive(Debug, Clone, PartialEq)]
pub enum RvfData {
    F32(ArrayD<f32>),
    F64(ArrayD<f64>),
    I32(ArrayD<i32>),
    I64(ArrayD<i64>),
    U8(ArrayD<u8>),
}

impl RvfData {
    pub fn dtype(&self) -> &'static str {
        match self {
            Self::F32(_) => "float32",
            Self::F64(_) => "float64",
            Self::I32(_) => "int32",
            Self::I64(_) => "int64",
            Self::U8(_) => "uint8",
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            Self::F32(a) => a.shape(),
            Self::F64(a) => a.shape(),
            Self::I32(a) => a.shape(),
            Self::I64(a) => a.shape(),
            Self::U8(a) => a.shape(),
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            Self::F32(a) => a.iter().all(|v| v.is_finite()),
            Self::F64(a) => a.iter().all(|v| v.is_finite()),
            _ => true,
        }
    }

    pub fn into_f32(self) -> Result<ArrayD<f32>> {
        match self {
            Self::F32(a) => Ok(a),
            other => Err(Error::format("dtype", format!("expected float32, found {}", other.dtype()))),
        }
    }

    pub fn into_f64(self) -> Result<ArrayD<f64>> {
        match self {
            Self::F64(a) => Ok(a),
            other => Err(Error::format("dtype", format!("expected float64, found {}", other.dtype()))),
        }
    }
}

/// A tensor plus free-form JSON metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct RvfTensor {
    pub data: RvfData,
    pub metadata: Map<String, Value>,
}

impl RvfTensor {
    pub fn new(data: RvfData) -> Self {
        Self {
            data,
            metadata: Map::new(),
        }
    }

    pub fn with_metadata(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.metadata.insert(key.to_string(), value.into());
        self
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    shape: Vec<usize>,
    order: String,
    #[serde(default)]
    metadata: Map<String, Value>,
}

macro_rules! le_bytes {
    ($arr:expr, $out:expr) => {
        for v in $arr.iter() {
            $out.extend_from_slice(&v.to_le_bytes());
        }
    };
}

pub fn to_bytes(t: &RvfTensor) -> Result<Vec<u8>> {
    if !t.data.is_finite() {
        return Err(Error::NonFinite("RVF payload".into()));
    }
    let header = Header {
        dtype: t.data.dtype().to_string(),
        shape: t.data.shape().to_vec(),
        order: "C".into(),
        metadata: t.metadata.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(8 + json.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    match &t.data {
        RvfData::F32(a) => le_bytes!(a, out),
        RvfData::F64(a) => le_bytes!(a, out),
        RvfData::I32(a) => le_bytes!(a, out),
        RvfData::I64(a) => le_bytes!(a, out),
        RvfData::U8(a) => out.extend(a.iter().copied()),
    }
    Ok(out)
}

fn decode<T, const N: usize>(payload: &[u8], shape: &[usize], f: fn([u8; N]) -> T) -> Result<ArrayD<T>> {
    let values: Vec<T> = payload
        .chunks_exact(N)
        .map(|c| f(c.try_into().expect("chunk size")))
        .collect();
    ArrayD::from_shape_vec(IxDyn(shape), values).map_err(|e| Error::format("shape", e.to_string()))
}

pub fn from_bytes(bytes: &[u8]) -> Result<RvfTensor> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::format("magic", "file does not start with \"RVF1\""));
    }
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if body.len() < hlen {
        return Err(Error::format(
            "header_length",
            format!("header claims {hlen} bytes, only {} available", body.len()),
        ));
    }
    let header: Header = serde_json::from_slice(&body[..hlen])
        .map_err(|e| Error::format("header", e.to_string()))?;
    if header.order != "C" {
        return Err(Error::format("order", format!("expected \"C\", found {:?}", header.order)));
    }
    let payload = &body[hlen..];
    let count: usize = header.shape.iter().product();
    let width = match header.dtype.as_str() {
        "float32" | "int32" => 4,
        "float64" | "int64" => 8,
        "uint8" => 1,
        other => {
            return Err(Error::Unsupported {
                what: "RVF dtype",
                value: other.to_string(),
            })
        }
    };
    if payload.len() != count * width {
        return Err(Error::format(
            "payload",
            format!(
                "length mismatch: shape {:?} needs {} bytes, found {}",
                header.shape,
                count * width,
                payload.len()
            ),
        ));
    }
    let shape = &header.shape;
    let data = match header.dtype.as_str() {
        "float32" => RvfData::F32(decode(payload, shape, f32::from_le_bytes)?),
        "float64" => RvfData::F64(decode(payload, shape, f64::from_le_bytes)?),
        "int32" => RvfData::I32(decode(payload, shape, i32::from_le_bytes)?),
        "int64" => RvfData::I64(decode(payload, shape, i64::from_le_bytes)?),
        _ => RvfData::U8(ArrayD::from_shape_vec(IxDyn(shape), payload.to_vec())
            .map_err(|e| Error::format("shape", e.to_string()))?),
    };
    Ok(RvfTensor {
        data,
        metadata: header.metadata,
    })
}

pub fn rvf_write(path: impl AsRef<Path>, t: &RvfTensor) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(t)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes to a sibling temp file and renames it into place.
pub fn rvf_write_atomic(path: impl AsRef<Path>, t: &RvfTensor) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(t)?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let tmp = dir.join(format!(
        ".{}.{}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("rvf"),
        std::process::id()
    ));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn rvf_read(path: impl AsRef<Path>) -> Result<RvfTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
