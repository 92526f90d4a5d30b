use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};
use trochlea::io::{load_raw, sidecar_path};
use trochlea::nifti::load_nifti1;
use trochlea::Volume;

use crate::error::CliError;

/// `.nii` through the NIfTI reader, anything else as a raw `.vol` pair.
pub fn read_volume(path: &Path) -> Result<Volume, CliError> {
    let name = path.to_string_lossy();
    if name.ends_with(".nii.gz") {
        return Err(CliError::Invalid(format!(
            "{name}: compressed NIfTI is not supported, decompress it first"
        )));
    }
    if name.ends_with(".nii") {
        Ok(load_nifti1(path)?)
    } else {
        Ok(load_raw(path)?)
    }
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Runtime(format!("cannot hash {}: {e}", path.display())))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

/// Logs the hash of `path` (and of its sidecar when there is one) and returns the former.
pub fn log_artifact(role: &str, path: &Path) -> Result<String, CliError> {
    let hash = sha256_file(path)?;
    log::info!("{role} {} sha256={hash}", path.display());
    let side = sidecar_path(path);
    if side != path && side.is_file() && path.extension().is_some_and(|e| e == "vol") {
        log::debug!("{role} sidecar {} sha256={}", side.display(), sha256_file(&side)?);
    }
    Ok(hash)
}

pub fn emit(value: &impl Serialize) -> Result<(), CliError> {
    let line = serde_json::to_string(value).map_err(|e| CliError::Runtime(format!("serializing result: {e}")))?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{line}").map_err(|e| CliError::Runtime(format!("writing to stdout: {e}")))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

/// File name without the `.vol` / `.nii` extension.
pub fn stem(path: &Path) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    for ext in [".vol", ".nii"] {
        if let Some(s) = name.strip_suffix(ext) {
            return s.to_string();
        }
    }
    name
}

/// Pairs every item with a partner list that is either the same length or a single shared entry.
pub fn pair_up<'a, T>(items: &'a [T], partners: &'a [T], what: &str) -> Result<Vec<(&'a T, &'a T)>, CliError> {
    match partners.len() {
        1 => Ok(items.iter().map(|i| (i, &partners[0])).collect()),
        n if n == items.len() => Ok(items.iter().zip(partners).collect()),
        n => Err(CliError::Invalid(format!(
            "{} inputs but {n} {what}; give one or one per input",
            items.len()
        ))),
    }
}

pub fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    if jobs == 0 {
        return Err(CliError::Invalid("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Runtime(format!("cannot start worker threads: {e}")))
}
