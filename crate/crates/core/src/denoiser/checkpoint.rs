//! Checkpoints: `<name>` holds the parameters as little-endian f32 and
//! `<name>.json` the header describing how to rebuild the network.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::net::{DenoiserNet, NetConfig};
use crate::diffusion::ScheduleConfig;
use crate::error::{Error, Result};
use crate::io::{f32s_to_le_bytes, le_bytes_to_f32s};

pub const CHECKPOINT_FORMAT: &str = "trochlea-denoiser-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format: String,
    pub architecture: NetConfig,
    pub param_count: usize,
    pub dtype: String,
    pub iterations: usize,
    pub seed: u64,
    pub schedule: ScheduleConfig,
}

/// `w.ckpt` -> `w.ckpt.json`.
pub fn header_path(path: &Path) -> PathBuf {
    let mut s = OsString::from(path.as_os_str());
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_checkpoint(
    net: &DenoiserNet,
    path: impl AsRef<Path>,
    iterations: usize,
    seed: u64,
    schedule: &ScheduleConfig,
) -> Result<()> {
    let path = path.as_ref();
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        architecture: net.config().clone(),
        param_count: net.param_count(),
        dtype: "f32le".into(),
        iterations,
        seed,
        schedule: schedule.clone(),
    };
    let values: Vec<f32> = net.params().iter().map(|&p| p as f32).collect();
    fs::write(path, f32s_to_le_bytes(&values)).map_err(|e| Error::io(path, e))?;
    let hp = header_path(path);
    let text = serde_json::to_string_pretty(&header).map_err(|e| Error::Json {
        path: hp.clone(),
        source: e,
    })?;
    fs::write(&hp, text).map_err(|e| Error::io(&hp, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(DenoiserNet, CheckpointHeader)> {
    let path = path.as_ref();
    let hp = header_path(path);
    let text = fs::read_to_string(&hp).map_err(|e| Error::io(&hp, e))?;
    let header: CheckpointHeader = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: hp.clone(),
        source: e,
    })?;
    if header.format != CHECKPOINT_FORMAT || header.dtype != "f32le" {
        return Err(Error::format(
            &hp,
            format!("unsupported checkpoint {} / {}", header.format, header.dtype),
        ));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != 4 * header.param_count {
        return Err(Error::format(
            path,
            format!(
                "header declares {} parameters but file has {} bytes",
                header.param_count,
                bytes.len()
            ),
        ));
    }
    let params = le_bytes_to_f32s(&bytes).into_iter().map(f64::from).collect();
    let net = DenoiserNet::from_params(header.architecture.clone(), params)
        .map_err(|e| Error::format(path, e.to_string()))?;
    Ok((net, header))
}
