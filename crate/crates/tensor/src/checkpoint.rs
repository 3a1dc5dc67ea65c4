//! Named-tensor checkpoints: `<name>.bin` holds little-endian `f32` values
//! back to back, `<name>.json` lists each tensor's name, shape and byte
//! offset in order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Shape,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub encoding: String,
    pub tensors: Vec<ManifestEntry>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TensorError + '_ {
    move |source| TensorError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn save_checkpoint<'a, T: Real>(
    path: &Path,
    tensors: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)>,
) -> Result<()> {
    let mut bytes = Vec::new();
    let mut entries = Vec::new();
    for (name, t) in tensors {
        entries.push(ManifestEntry {
            name: name.to_string(),
            shape: t.shape(),
            offset: bytes.len(),
        });
        bytes.extend(t.data().iter().flat_map(|v| (v.as_f64() as f32).to_le_bytes()));
    }
    let bin = path.with_extension("bin");
    fs::write(&bin, &bytes).map_err(io_err(&bin))?;
    let manifest = Manifest {
        encoding: "f32le".into(),
        tensors: entries,
    };
    let json = path.with_extension("json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&json, text).map_err(io_err(&json))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Vec<(String, Tensor<T>)>> {
    let json = path.with_extension("json");
    let text = fs::read(&json).map_err(io_err(&json))?;
    let manifest: Manifest = serde_json::from_slice(&text).map_err(|e| TensorError::Checkpoint {
        path: json.clone(),
        detail: e.to_string(),
    })?;
    if manifest.encoding != "f32le" {
        return Err(TensorError::Checkpoint {
            path: json,
            detail: format!("unknown encoding {:?}", manifest.encoding),
        });
    }
    let bin = path.with_extension("bin");
    let bytes = fs::read(&bin).map_err(io_err(&bin))?;
    manifest
        .tensors
        .into_iter()
        .map(|e| {
            let n: usize = e.shape.iter().product();
            let end = e.offset + 4 * n;
            let raw = bytes.get(e.offset..end).ok_or_else(|| TensorError::Checkpoint {
                path: bin.clone(),
                detail: format!("tensor {} runs past end of payload", e.name),
            })?;
            let data = raw
                .chunks_exact(4)
                .map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
                .collect();
            Ok((e.name, Tensor::new(e.shape, data)?))
        })
        .collect()
}
