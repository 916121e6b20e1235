//! Versioned binary checkpoint for [`RegressorModel`].
//!
//! Layout: `b"CLMODEL\0"`, little-endian `u32` format version, `u32` header
//! length, a JSON header (architecture, normalization statistics, pipeline,
//! sensor layout, cylinder, training config, seed), then the weights as
//! little-endian `f64`.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::input::{Modalities, Pipeline};
use super::network::{Architecture, Network};
use super::train::{RegressorModel, TrainConfig};
use super::LocalizeError;
use crate::geometry::CylinderSpec;
use crate::preprocess::NormStats;
use crate::simulate::SensorLayout;

const MAGIC: &[u8; 8] = b"CLMODEL\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    architecture: Architecture,
    param_count: usize,
    norm_stats: NormStats,
    modalities: Modalities,
    pipeline: Pipeline,
    layout: SensorLayout,
    cylinder: CylinderSpec,
    config: TrainConfig,
    seed: u64,
}

fn bad(m: impl std::fmt::Display) -> LocalizeError {
    LocalizeError::Checkpoint(m.to_string())
}

pub fn write_checkpoint<W: Write>(model: &RegressorModel, mut w: W) -> Result<(), LocalizeError> {
    let header = Header {
        architecture: model.net.arch.clone(),
        param_count: model.net.params.len(),
        norm_stats: model.norm_stats.clone(),
        modalities: model.modalities,
        pipeline: model.pipeline.clone(),
        layout: model.layout.clone(),
        cylinder: model.cylinder,
        config: model.config.clone(),
        seed: model.seed,
    };
    let json = serde_json::to_vec(&header).map_err(bad)?;
    let io = |e: std::io::Error| bad(e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_u32::<LittleEndian>(CHECKPOINT_VERSION).map_err(io)?;
    w.write_u32::<LittleEndian>(json.len() as u32).map_err(io)?;
    w.write_all(&json).map_err(io)?;
    for &p in &model.net.params {
        w.write_f64::<LittleEndian>(p).map_err(io)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<RegressorModel, LocalizeError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("file too short"))?;
    if &magic != MAGIC {
        return Err(bad("not a model checkpoint"));
    }
    let version = r.read_u32::<LittleEndian>().map_err(bad)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let len = r.read_u32::<LittleEndian>().map_err(bad)? as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(|_| bad("truncated header"))?;
    let h: Header = serde_json::from_slice(&json).map_err(bad)?;
    if h.param_count != h.architecture.param_count() {
        return Err(bad("header parameter count disagrees with the architecture"));
    }
    let mut params = vec![0.0; h.param_count];
    r.read_f64_into::<LittleEndian>(&mut params).map_err(|_| bad("truncated weights"))?;
    Ok(RegressorModel {
        net: Network::from_params(h.architecture, params)?,
        norm_stats: h.norm_stats,
        modalities: h.modalities,
        pipeline: h.pipeline,
        layout: h.layout,
        cylinder: h.cylinder,
        config: h.config,
        seed: h.seed,
    })
}

pub fn save_checkpoint(model: &RegressorModel, path: &Path) -> Result<(), LocalizeError> {
    let f = std::fs::File::create(path).map_err(|e| LocalizeError::Io { path: path.display().to_string(), reason: e.to_string() })?;
    let mut w = std::io::BufWriter::new(f);
    write_checkpoint(model, &mut w)?;
    w.flush().map_err(|e| LocalizeError::Io { path: path.display().to_string(), reason: e.to_string() })
}

pub fn load_checkpoint(path: &Path) -> Result<RegressorModel, LocalizeError> {
    let f = std::fs::File::open(path).map_err(|e| LocalizeError::Io { path: path.display().to_string(), reason: e.to_string() })?;
    read_checkpoint(std::io::BufReader::new(f))
}
