//! Minimal reader for single-file, uncompressed NIfTI-1 (`.nii`) volumes.
//!
//! Only 3D `int16` and `float32` images are supported. The affine is ignored;
//! spacing comes from `pixdim[1..=3]`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::Volume;

const HEADER_SIZE: usize = 348;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;

#[derive(Debug, Clone, Copy)]
enum Endian {
    Little,
    Big,
}

struct Reader<'a> {
    bytes: &'a [u8],
    endian: Endian,
}

impl Reader<'_> {
    fn arr<const N: usize>(&self, at: usize) -> [u8; N] {
        let mut out = [0u8; N];
        out.copy_from_slice(&self.bytes[at..at + N]);
        out
    }

    fn i16(&self, at: usize) -> i16 {
        match self.endian {
            Endian::Little => i16::from_le_bytes(self.arr(at)),
            Endian::Big => i16::from_be_bytes(self.arr(at)),
        }
    }

    fn f32(&self, at: usize) -> f32 {
        match self.endian {
            Endian::Little => f32::from_le_bytes(self.arr(at)),
            Endian::Big => f32::from_be_bytes(self.arr(at)),
        }
    }
}

/// Loads a NIfTI-1 file, applying `scl_slope`/`scl_inter` when the slope is non-zero.
pub fn load_nifti1(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_nifti1(&bytes).map_err(|reason| Error::format(path, reason))
}

fn parse_nifti1(bytes: &[u8]) -> std::result::Result<Volume, String> {
    if bytes.len() < HEADER_SIZE {
        return Err(format!("file is {} bytes, shorter than a NIfTI-1 header", bytes.len()));
    }
    let endian = if i32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) == 348 {
        Endian::Little
    } else if i32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) == 348 {
        Endian::Big
    } else {
        return Err("sizeof_hdr is not 348".into());
    };
    let r = Reader { bytes, endian };

    if &bytes[344..348] != b"n+1\0" {
        return Err(format!(
            "bad magic {:?}, expected single-file \"n+1\"",
            &bytes[344..348]
        ));
    }

    let rank = r.i16(40);
    if rank != 3 {
        return Err(format!("dim[0] = {rank}, only 3D volumes are supported"));
    }
    let mut dims = [0usize; 3];
    for (a, d) in dims.iter_mut().enumerate() {
        let n = r.i16(42 + 2 * a);
        if n <= 0 {
            return Err(format!("dim[{}] = {n} is not positive", a + 1));
        }
        *d = n as usize;
    }
    let datatype = r.i16(70);
    let sample_size = match datatype {
        DT_INT16 => 2,
        DT_FLOAT32 => 4,
        other => return Err(format!("unsupported datatype code {other}")),
    };
    let mut spacing = [0f64; 3];
    for (a, s) in spacing.iter_mut().enumerate() {
        *s = r.f32(80 + 4 * a).abs() as f64;
    }
    let vox_offset = r.f32(108);
    if !(vox_offset.is_finite() && vox_offset >= HEADER_SIZE as f32) {
        return Err(format!("vox_offset {vox_offset} is invalid"));
    }
    let offset = vox_offset as usize;
    let slope = r.f32(112);
    let inter = r.f32(116);

    let n = dims.iter().product::<usize>();
    let end = offset + n * sample_size;
    if bytes.len() < end {
        return Err(format!(
            "data ends at byte {end} but the file has {} bytes",
            bytes.len()
        ));
    }
    let raw = Reader {
        bytes: &bytes[offset..end],
        endian,
    };
    let mut data: Vec<f32> = match datatype {
        DT_INT16 => (0..n).map(|i| raw.i16(2 * i) as f32).collect(),
        _ => (0..n).map(|i| raw.f32(4 * i)).collect(),
    };
    if slope != 0.0 && slope.is_finite() {
        let inter = if inter.is_finite() { inter } else { 0.0 };
        for v in &mut data {
            *v = *v * slope + inter;
        }
    }
    Volume::new(dims, spacing, data).map_err(|e| e.to_string())
}
