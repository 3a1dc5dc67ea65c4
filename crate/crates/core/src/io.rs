//! Raw payload + JSON sidecar file format.
//!
//! A volume named `case` is stored as `case.vol` (little-endian payload) and
//! `case.json` (metadata). Scalar fields use `f32le`, label masks `u8`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::volume::{Grid, LabelVolume, Volume3};

pub const ENCODING_F32: &str = "f32le";
pub const ENCODING_U8: &str = "u8";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeMeta {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
    pub encoding: String,
    #[serde(default)]
    pub provenance: String,
}

impl VolumeMeta {
    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.dims, self.spacing_mm, self.origin_mm)
    }

    fn from_grid(grid: &Grid, encoding: &str, provenance: &str) -> Self {
        VolumeMeta {
            dims: grid.dims,
            spacing_mm: grid.spacing,
            origin_mm: grid.origin,
            encoding: encoding.to_string(),
            provenance: provenance.to_string(),
        }
    }
}

/// Either kind of volume, as dispatched on the sidecar's encoding tag.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyVolume {
    Scalar(Volume3),
    Labels(LabelVolume),
}

pub fn payload_path(path: &Path) -> PathBuf {
    path.with_extension("vol")
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("sidecar types always serialize");
    fs::write(path, text).map_err(|e| CoreError::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = read_bytes(path)?;
    serde_json::from_slice(&text).map_err(|source| CoreError::Sidecar {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CoreError::MissingFile(path.to_path_buf()),
        _ => CoreError::io(path, e),
    })
}

pub(crate) fn encode_f32(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub(crate) fn decode_f32(path: &Path, bytes: &[u8], expected: usize) -> Result<Vec<f32>> {
    if bytes.len() % 4 != 0 || bytes.len() / 4 != expected {
        return Err(CoreError::SizeMismatch {
            path: path.to_path_buf(),
            expected,
            found: bytes.len() / 4,
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn save_volume(volume: &Volume3, path: &Path, provenance: &str) -> Result<()> {
    let meta = VolumeMeta::from_grid(volume.grid(), ENCODING_F32, provenance);
    let payload = payload_path(path);
    fs::write(&payload, encode_f32(volume.values())).map_err(|e| CoreError::io(&payload, e))?;
    write_json(&sidecar_path(path), &meta)
}

pub fn save_labels(mask: &LabelVolume, path: &Path, provenance: &str) -> Result<()> {
    let meta = VolumeMeta::from_grid(mask.grid(), ENCODING_U8, provenance);
    let payload = payload_path(path);
    fs::write(&payload, mask.labels()).map_err(|e| CoreError::io(&payload, e))?;
    write_json(&sidecar_path(path), &meta)
}

pub fn load_meta(path: &Path) -> Result<VolumeMeta> {
    read_json(&sidecar_path(path))
}

/// Load a volume of either encoding.
pub fn load_volume(path: &Path) -> Result<AnyVolume> {
    let meta = load_meta(path)?;
    let grid = meta.grid()?;
    let payload = payload_path(path);
    let bytes = read_bytes(&payload)?;
    match meta.encoding.as_str() {
        ENCODING_F32 => {
            let values = decode_f32(&payload, &bytes, grid.len())?;
            Ok(AnyVolume::Scalar(Volume3::new(grid, values)?))
        }
        ENCODING_U8 => {
            if bytes.len() != grid.len() {
                return Err(CoreError::SizeMismatch {
                    path: payload,
                    expected: grid.len(),
                    found: bytes.len(),
                });
            }
            Ok(AnyVolume::Labels(LabelVolume::new(grid, bytes)?))
        }
        other => Err(CoreError::UnknownEncoding(other.to_string())),
    }
}

pub fn load_scalar(path: &Path) -> Result<Volume3> {
    match load_volume(path)? {
        AnyVolume::Scalar(v) => Ok(v),
        AnyVolume::Labels(_) => Err(CoreError::WrongEncoding {
            expected: ENCODING_F32.into(),
            found: ENCODING_U8.into(),
        }),
    }
}

pub fn load_labels(path: &Path) -> Result<LabelVolume> {
    match load_volume(path)? {
        AnyVolume::Labels(v) => Ok(v),
        AnyVolume::Scalar(_) => Err(CoreError::WrongEncoding {
            expected: ENCODING_U8.into(),
            found: ENCODING_F32.into(),
        }),
    }
}
