//! Raw volume files: `<name>.vol` holds little-endian samples (x fastest,
//! z slowest) and `<name>.json` the sidecar describing them.
//!
//! ```json
//! {"dims":[nx,ny,nz],"spacing_mm":[sx,sy,sz],"dtype":"f32le","order":"x-fastest"}
//! ```
//!
//! Scalar volumes and masks use `f32le`; label maps use `u8`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{BinaryMask, Dims, Grid, LabelMap, Spacing, Volume};

pub const ORDER_X_FASTEST: &str = "x-fastest";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleType {
    #[serde(rename = "f32le")]
    F32Le,
    #[serde(rename = "u8")]
    U8,
}

impl SampleType {
    fn size(self) -> usize {
        match self {
            SampleType::F32Le => 4,
            SampleType::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub dims: Dims,
    pub spacing_mm: Spacing,
    pub dtype: SampleType,
    pub order: String,
    /// Channel names for multi-channel files (wavelet coefficient stacks).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bands: Option<Vec<String>>,
}

impl Sidecar {
    pub fn new(grid: &Grid, dtype: SampleType) -> Self {
        Sidecar {
            dims: grid.dims,
            spacing_mm: grid.spacing,
            dtype,
            order: ORDER_X_FASTEST.to_string(),
            bands: None,
        }
    }

    fn channels(&self) -> usize {
        self.bands.as_ref().map_or(1, |b| b.len().max(1))
    }
}

/// Sidecar path for a data file: `scan.vol` -> `scan.json`.
pub fn sidecar_path(data_path: &Path) -> PathBuf {
    data_path.with_extension("json")
}

pub fn write_sidecar(data_path: &Path, sidecar: &Sidecar) -> Result<()> {
    let path = sidecar_path(data_path);
    let text = serde_json::to_string(sidecar).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_sidecar(data_path: &Path) -> Result<Sidecar> {
    let path = sidecar_path(data_path);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    if sidecar.order != ORDER_X_FASTEST {
        return Err(Error::format(&path, format!("unsupported order {:?}", sidecar.order)));
    }
    Ok(sidecar)
}

pub(crate) fn f32s_to_le_bytes(values: &[f32]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

pub(crate) fn le_bytes_to_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

/// Reads the sidecar and payload, checking that the byte count matches.
pub(crate) fn read_payload(path: &Path) -> Result<(Sidecar, Vec<u8>)> {
    let sidecar = read_sidecar(path)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let voxels: usize = sidecar.dims.iter().product();
    let expected = voxels * sidecar.channels() * sidecar.dtype.size();
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!(
                "sidecar declares {:?} x {} channel(s) of {:?} ({expected} bytes) but data has {} bytes",
                sidecar.dims,
                sidecar.channels(),
                sidecar.dtype,
                bytes.len()
            ),
        ));
    }
    Ok((sidecar, bytes))
}

pub(crate) fn write_payload(path: &Path, sidecar: &Sidecar, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    write_sidecar(path, sidecar)
}

pub fn save_raw(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_payload(
        path,
        &Sidecar::new(v.grid(), SampleType::F32Le),
        &f32s_to_le_bytes(v.data()),
    )
}

/// Loads a scalar volume. `u8` files are widened to `f32`.
pub fn load_raw(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let (sidecar, bytes) = read_payload(path)?;
    if sidecar.bands.is_some() {
        return Err(Error::format(
            path,
            "multi-channel file; load it as wavelet coefficients",
        ));
    }
    let data = match sidecar.dtype {
        SampleType::F32Le => le_bytes_to_f32s(&bytes),
        SampleType::U8 => bytes.iter().map(|&b| b as f32).collect(),
    };
    Volume::new(sidecar.dims, sidecar.spacing_mm, data).map_err(|e| Error::format(path, e.to_string()))
}

/// Masks are stored as `f32le` volumes holding 0.0 and 1.0.
pub fn save_mask(m: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    save_raw(&m.to_volume(), path)
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let path = path.as_ref();
    let v = load_raw(path)?;
    BinaryMask::from_volume(&v).map_err(|e| Error::format(path, e.to_string()))
}

pub fn save_labels(labels: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_payload(path, &Sidecar::new(labels.grid(), SampleType::U8), labels.data())
}

/// Loads a label map from a `u8` file or an integer-valued `f32le` file.
pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    let path = path.as_ref();
    let (sidecar, bytes) = read_payload(path)?;
    let data = match sidecar.dtype {
        SampleType::U8 => bytes,
        SampleType::F32Le => le_bytes_to_f32s(&bytes)
            .into_iter()
            .map(|x| {
                if x.fract() == 0.0 && (0.0..=255.0).contains(&x) {
                    Ok(x as u8)
                } else {
                    Err(Error::format(
                        path,
                        format!("label value {x} is not an integer in 0..=255"),
                    ))
                }
            })
            .collect::<Result<Vec<u8>>>()?,
    };
    LabelMap::new(sidecar.dims, sidecar.spacing_mm, data).map_err(|e| Error::format(path, e.to_string()))
}
