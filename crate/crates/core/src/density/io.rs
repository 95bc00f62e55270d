//! On-disk formats: annotation JSON and the `DMAP` density map file.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::DensityMap;
use crate::error::{Error, Result};

pub const DMAP_MAGIC: &[u8; 4] = b"DMAP";

/// One entry of an annotation file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image: PathBuf,
    /// `[x, y]` pixel coordinates.
    pub points: Vec<[f64; 2]>,
}

pub fn read_annotations(path: &Path) -> Result<Vec<AnnotationRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_annotations(path: &Path, records: &[AnnotationRecord]) -> Result<()> {
    let mut text = serde_json::to_string_pretty(records)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `DMAP` magic, `u32` height, `u32` width, then `f32` values, all little-endian.
pub fn encode_dmap(map: &DensityMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * map.values().len());
    out.extend_from_slice(DMAP_MAGIC);
    out.extend_from_slice(&(map.height() as u32).to_le_bytes());
    out.extend_from_slice(&(map.width() as u32).to_le_bytes());
    for v in map.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses a `DMAP` buffer. The file carries no scale, so the caller supplies it.
pub fn decode_dmap(bytes: &[u8], resolution_divisor: usize) -> Result<DensityMap> {
    if bytes.len() < 12 || &bytes[..4] != DMAP_MAGIC {
        return Err(Error::DensityFile("missing DMAP magic".into()));
    }
    let h = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let w = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = &bytes[12..];
    if body.len() != h * w * 4 {
        return Err(Error::DensityFile(format!(
            "{h}x{w} map needs {} payload bytes, found {}",
            h * w * 4,
            body.len()
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    DensityMap::new(h, w, resolution_divisor, values)
}

pub fn write_dmap(path: &Path, map: &DensityMap) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_dmap(map)).map_err(|e| Error::io(path, e))
}

pub fn read_dmap(path: &Path, resolution_divisor: usize) -> Result<DensityMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dmap(&bytes, resolution_divisor)
}
