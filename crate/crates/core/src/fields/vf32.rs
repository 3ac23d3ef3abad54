//! `VF32` volume files.
//!
//! Layout (little-endian): magic `VF32`, `u32` version (1), `u32` channels
//! (1 or 3), `u32` nx, ny, nz, `f32` spacing, then `channels * nx * ny * nz`
//! `f32` values. Values are x-fastest within a channel; channels are stored
//! one after another.

use std::path::Path;

use super::{Dims, ScalarField3, VectorField3};
use crate::atomic::write_atomic;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"VF32";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 28;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vf32Header {
    pub version: u32,
    pub channels: u32,
    pub dims: Dims,
    pub spacing: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Volume {
    Scalar(ScalarField3),
    Vector(VectorField3),
}

impl Volume {
    pub fn dims(&self) -> Dims {
        match self {
            Volume::Scalar(f) => f.dims(),
            Volume::Vector(f) => f.dims(),
        }
    }

    pub fn into_scalar(self) -> Result<ScalarField3> {
        match self {
            Volume::Scalar(f) => Ok(f),
            Volume::Vector(_) => Err(Error::format("VF32", "expected 1 channel, found 3")),
        }
    }

    pub fn into_vector(self) -> Result<VectorField3> {
        match self {
            Volume::Vector(f) => Ok(f),
            Volume::Scalar(_) => Err(Error::format("VF32", "expected 3 channels, found 1")),
        }
    }
}

fn encode(dims: Dims, spacing: f64, channels: &[&[f64]]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * channels.len() * dims.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(channels.len() as u32).to_le_bytes());
    for n in dims.as_array() {
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    out.extend_from_slice(&(spacing as f32).to_le_bytes());
    for c in channels {
        for &v in c.iter() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn encode_scalar(f: &ScalarField3) -> Vec<u8> {
    encode(f.dims(), f.spacing(), &[f.data()])
}

pub fn encode_vector(f: &VectorField3) -> Vec<u8> {
    encode(f.dims(), f.spacing(), &[f.comp(0), f.comp(1), f.comp(2)])
}

fn u32_at(bytes: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap())
}

pub fn decode_header(bytes: &[u8]) -> Result<Vf32Header> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format("VF32", format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format("VF32", "bad magic"));
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(Error::format("VF32", format!("unsupported version {version}")));
    }
    let channels = u32_at(bytes, 8);
    if channels != 1 && channels != 3 {
        return Err(Error::format("VF32", format!("channel count {channels} is not 1 or 3")));
    }
    let dims = Dims::new(
        u32_at(bytes, 12) as usize,
        u32_at(bytes, 16) as usize,
        u32_at(bytes, 20) as usize,
    );
    let spacing = f32::from_le_bytes(bytes[24..28].try_into().unwrap());
    Ok(Vf32Header {
        version,
        channels,
        dims,
        spacing,
    })
}

pub fn decode(bytes: &[u8]) -> Result<Volume> {
    let h = decode_header(bytes)?;
    let n = h.dims.len();
    let want = HEADER_LEN + 4 * n * h.channels as usize;
    if bytes.len() != want {
        return Err(Error::format(
            "VF32",
            format!("payload is {} bytes, expected {}", bytes.len(), want),
        ));
    }
    let values: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let spacing = h.spacing as f64;
    if h.channels == 1 {
        Ok(Volume::Scalar(ScalarField3::from_vec(h.dims, spacing, values)?))
    } else {
        let comps = [0, 1, 2].map(|c| values[c * n..(c + 1) * n].to_vec());
        Ok(Volume::Vector(VectorField3::from_vecs(h.dims, spacing, comps)?))
    }
}

pub fn read(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn read_header(path: impl AsRef<Path>) -> Result<Vf32Header> {
    use std::io::Read;
    let path = path.as_ref();
    let mut buf = [0u8; HEADER_LEN];
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    file.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
    decode_header(&buf)
}

pub fn write_scalar(path: impl AsRef<Path>, f: &ScalarField3) -> Result<()> {
    write_atomic(path.as_ref(), &encode_scalar(f))
}

pub fn write_vector(path: impl AsRef<Path>, f: &VectorField3) -> Result<()> {
    write_atomic(path.as_ref(), &encode_vector(f))
}

/// Per-frame file name inside a sequence directory.
pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:04}.vf32")
}

/// `frame_*.vf32` files of a sequence directory in lexicographic order.
pub fn list_frames(dir: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>> {
    let dir = dir.as_ref();
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if name.starts_with("frame_") && name.ends_with(".vf32") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}
