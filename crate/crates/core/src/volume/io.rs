//! Volume files (`.qv`): the [`crate::container`] framing with a JSON header
//!
//! ```json
//! {"format":"rhomap-volume","version":1,"dims":[nx,ny,nz],
//!  "spacing":[sx,sy,sz],"dtype":"f32","endian":"little"}
//! ```
//!
//! followed by `nx*ny*nz` little-endian samples in storage order. `f32` is
//! the default on-disk type; `f64` is available when exact round-trips of
//! arbitrary in-memory values are needed; masks are stored as `u8`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{RoiMask, Volume3D};
use crate::container;
use crate::{Error, Result};

const FORMAT: &str = "rhomap-volume";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
    U8,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    dims: [usize; 3],
    spacing: [f64; 3],
    dtype: Dtype,
    endian: String,
}

pub fn save_volume(vol: &Volume3D, path: impl AsRef<Path>) -> Result<()> {
    save_volume_as(vol, path, Dtype::F32)
}

pub fn save_volume_as(vol: &Volume3D, path: impl AsRef<Path>, dtype: Dtype) -> Result<()> {
    let header = Header {
        format: FORMAT.into(),
        version: VERSION,
        dims: vol.dims(),
        spacing: vol.spacing(),
        dtype,
        endian: "little".into(),
    };
    let payload: Vec<u8> = match dtype {
        Dtype::F32 => vol.data().iter().flat_map(|&v| (v as f32).to_le_bytes()).collect(),
        Dtype::F64 => container::f64s_to_le(vol.data()),
        Dtype::U8 => {
            return Err(Error::param("u8 storage is reserved for masks; use save_mask"));
        }
    };
    container::write(path.as_ref(), &header, &payload)
}

fn read_checked(path: &Path) -> Result<(Header, Vec<u8>)> {
    let bytes = container::read(path)?;
    let (header, payload): (Header, &[u8]) = container::decode(&bytes)?;
    if header.format != FORMAT {
        return Err(Error::MalformedHeader(format!("unexpected format tag {:?}", header.format)));
    }
    if header.version != VERSION {
        return Err(Error::MalformedHeader(format!("unsupported version {}", header.version)));
    }
    if header.endian != "little" {
        return Err(Error::MalformedHeader(format!("unsupported endianness {:?}", header.endian)));
    }
    let n: usize = header.dims.iter().product();
    let expected = n * header.dtype.width();
    if payload.len() != expected {
        return Err(Error::PayloadSizeMismatch {
            expected,
            got: payload.len(),
        });
    }
    Ok((header, payload.to_vec()))
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume3D> {
    let (header, payload) = read_checked(path.as_ref())?;
    let data = match header.dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F64 => container::le_to_f64s(&payload),
        Dtype::U8 => payload.iter().map(|&b| b as f64).collect(),
    };
    Volume3D::from_data(header.dims, header.spacing, data)
}

pub fn save_mask(mask: &RoiMask, spacing: [f64; 3], path: impl AsRef<Path>) -> Result<()> {
    let header = Header {
        format: FORMAT.into(),
        version: VERSION,
        dims: mask.dims(),
        spacing,
        dtype: Dtype::U8,
        endian: "little".into(),
    };
    container::write(path.as_ref(), &header, mask.labels())
}

/// Loads a mask file, or any volume whose values are exactly 0 or 1.
pub fn load_mask(path: impl AsRef<Path>) -> Result<RoiMask> {
    let (header, payload) = read_checked(path.as_ref())?;
    match header.dtype {
        Dtype::U8 => RoiMask::new(header.dims, payload),
        _ => RoiMask::from_volume(&load_volume(path)?),
    }
}
