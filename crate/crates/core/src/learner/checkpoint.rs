//! Self-describing parameter files.
//!
//! Layout: the magic bytes `BFSF1`, a little-endian `u64` header length, a
//! JSON header, then every parameter as a little-endian `f32` in manifest
//! order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ApproximatorParams, Architecture, ParamEntry, TrainingConfig, UNet};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"BFSF1";
pub const FORMAT_VERSION: u32 = 1;
/// Image rows are stored bottom row first.
pub const ROW_ORIENTATION: &str = "bottom_up";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub arch: Architecture,
    pub d: usize,
    pub gamma: f64,
    pub sigma_px: f64,
    pub c: f64,
    pub row_orientation: String,
    pub manifest: Vec<ParamEntry>,
    pub config: TrainingConfig,
}

pub fn save_checkpoint(params: &ApproximatorParams, cfg: &TrainingConfig, path: impl AsRef<Path>) -> Result<()> {
    if params.arch() != &cfg.arch {
        return Err(Error::Checkpoint("parameters and config describe different architectures".into()));
    }
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        arch: params.arch().clone(),
        d: cfg.reward.d,
        gamma: cfg.gamma,
        sigma_px: cfg.reward.sigma_px,
        c: cfg.reward.c,
        row_orientation: ROW_ORIENTATION.into(),
        manifest: params.manifest().to_vec(),
        config: cfg.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut buf = Vec::with_capacity(MAGIC.len() + 8 + json.len() + 4 * params.values().len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for v in params.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ApproximatorParams, TrainingConfig)> {
    let bytes = fs::read(path.as_ref())?;
    decode(&bytes)
}

/// Loads a checkpoint and insists it was trained at resolution `d`.
pub fn load_checkpoint_for(path: impl AsRef<Path>, d: usize) -> Result<(ApproximatorParams, TrainingConfig)> {
    let (p, cfg) = load_checkpoint(path)?;
    if cfg.reward.d != d {
        return Err(Error::Checkpoint(format!(
            "checkpoint was trained at d = {}, requested d = {d}",
            cfg.reward.d
        )));
    }
    Ok((p, cfg))
}

fn decode(bytes: &[u8]) -> Result<(ApproximatorParams, TrainingConfig)> {
    let err = |m: &str| Error::Checkpoint(m.to_string());
    let rest = bytes.strip_prefix(MAGIC.as_slice()).ok_or_else(|| err("bad magic"))?;
    if rest.len() < 8 {
        return Err(err("truncated header"));
    }
    let (len, rest) = rest.split_at(8);
    let len = u64::from_le_bytes(len.try_into().expect("8 bytes")) as usize;
    if rest.len() < len {
        return Err(err("truncated header"));
    }
    let (json, payload) = rest.split_at(len);
    let header: CheckpointHeader = serde_json::from_slice(json).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    if header.row_orientation != ROW_ORIENTATION {
        return Err(Error::Checkpoint(format!("unsupported row orientation {}", header.row_orientation)));
    }
    let cfg = &header.config;
    if header.arch != cfg.arch
        || header.d != cfg.reward.d
        || header.gamma != cfg.gamma
        || header.sigma_px != cfg.reward.sigma_px
        || header.c != cfg.reward.c
    {
        return Err(err("header fields disagree with the stored config"));
    }
    let net = UNet::new(header.arch.clone());
    if net.manifest() != header.manifest.as_slice() {
        return Err(err("parameter manifest does not match the architecture"));
    }
    if payload.len() != 4 * net.num_params() {
        return Err(Error::Checkpoint(format!(
            "payload holds {} bytes, expected {}",
            payload.len(),
            4 * net.num_params()
        )));
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(err("non-finite parameter"));
    }
    let params = ApproximatorParams::from_values(header.arch, values)?;
    Ok((params, header.config))
}
