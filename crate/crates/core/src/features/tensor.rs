//! Flat binary container for cached feature tensors.
//!
//! Layout: `b"CLTENSOR"`, little-endian `u32` header length, a JSON header
//! (`version`, `dtype`, `shape`, `channel_order`), then row-major
//! little-endian `f32` data.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::FeatureError;

const MAGIC: &[u8; 8] = b"CLTENSOR";
pub const TENSOR_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorHeader {
    pub version: u32,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub channel_order: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub header: TensorHeader,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, channel_order: Vec<String>, data: Vec<f32>) -> Result<Self, FeatureError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(FeatureError::ShapeMismatch(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            header: TensorHeader {
                version: TENSOR_VERSION,
                dtype: "f32".into(),
                shape,
                channel_order,
            },
            data,
        })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header = serde_json::to_vec(&self.header)?;
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(header.len() as u32)?;
        w.write_all(&header)?;
        for &v in &self.data {
            w.write_f32::<LittleEndian>(v)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, FeatureError> {
        let bad = |m: String| FeatureError::Container(m);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|e| bad(e.to_string()))?;
        if &magic != MAGIC {
            return Err(bad("bad magic".into()));
        }
        let len = r.read_u32::<LittleEndian>().map_err(|e| bad(e.to_string()))? as usize;
        let mut hbuf = vec![0u8; len];
        r.read_exact(&mut hbuf).map_err(|e| bad(e.to_string()))?;
        let header: TensorHeader = serde_json::from_slice(&hbuf).map_err(|e| bad(e.to_string()))?;
        if header.version != TENSOR_VERSION || header.dtype != "f32" {
            return Err(bad(format!(
                "unsupported version {} / dtype {}",
                header.version, header.dtype
            )));
        }
        let n: usize = header.shape.iter().product();
        let mut data = vec![0f32; n];
        r.read_f32_into::<LittleEndian>(&mut data)
            .map_err(|e| bad(e.to_string()))?;
        Ok(Self { header, data })
    }
}
