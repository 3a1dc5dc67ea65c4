//! Patch grids over volumes and mean-blended re-aggregation.

use rand::Rng;

use crate::error::{CoreError, Result};
use crate::volume::{Grid, LabelVolume, Volume3};

/// Rejection-sampling budget for foreground-biased training patches.
pub const FOREGROUND_TRIES: usize = 100;
/// Probability of taking the uniform path when sampling a training patch.
pub const UNIFORM_PROBABILITY: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PatchSpec {
    pub size: [usize; 3],
    pub stride: [usize; 3],
    pub pad_value: f32,
}

impl PatchSpec {
    /// Cubic, non-overlapping patches.
    pub fn cubic(size: usize) -> Self {
        PatchSpec {
            size: [size; 3],
            stride: [size; 3],
            pad_value: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            if self.stride[a] == 0 || self.stride[a] > self.size[a] {
                return Err(CoreError::InvalidPatchSpec(format!(
                    "stride {:?} must satisfy 0 < stride <= size {:?}",
                    self.stride, self.size
                )));
            }
            if self.size[a] % 8 != 0 {
                return Err(CoreError::InvalidPatchSpec(format!(
                    "patch size {:?} must be divisible by 8",
                    self.size
                )));
            }
        }
        Ok(())
    }

    pub fn patch_len(&self) -> usize {
        self.size.iter().product()
    }
}

/// Origins along one axis: regular steps, last one clamped to end at the edge.
pub fn axis_origins(dim: usize, size: usize, stride: usize) -> Vec<usize> {
    if dim <= size {
        return vec![0];
    }
    let mut origins = Vec::new();
    let mut o = 0;
    loop {
        origins.push(o.min(dim - size));
        if o + size >= dim {
            break;
        }
        o += stride;
    }
    origins
}

/// All patch origins (voxel indices), x-fastest.
pub fn patch_origins(dims: [usize; 3], spec: &PatchSpec) -> Vec<[usize; 3]> {
    let per_axis: Vec<Vec<usize>> = (0..3)
        .map(|a| axis_origins(dims[a], spec.size[a], spec.stride[a]))
        .collect();
    let mut out = Vec::new();
    for &z in &per_axis[2] {
        for &y in &per_axis[1] {
            for &x in &per_axis[0] {
                out.push([x, y, z]);
            }
        }
    }
    out
}

/// Copy one patch out of a flat x-fastest array, padding beyond the edge.
pub fn crop<T: Copy>(data: &[T], dims: [usize; 3], origin: [usize; 3], size: [usize; 3], pad: T) -> Vec<T> {
    let mut out = Vec::with_capacity(size.iter().product());
    for k in 0..size[2] {
        for j in 0..size[1] {
            for i in 0..size[0] {
                let (x, y, z) = (origin[0] + i, origin[1] + j, origin[2] + k);
                if x < dims[0] && y < dims[1] && z < dims[2] {
                    out.push(data[x + dims[0] * (y + dims[1] * z)]);
                } else {
                    out.push(pad);
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub origin: [usize; 3],
    pub values: Vec<f32>,
}

pub fn extract_patches(volume: &Volume3, spec: &PatchSpec) -> Result<Vec<Patch>> {
    spec.validate()?;
    Ok(extract_unchecked(volume.values(), volume.dims(), spec))
}

/// Patch grid over raw data without the divisible-by-8 model constraint.
pub fn extract_unchecked(data: &[f32], dims: [usize; 3], spec: &PatchSpec) -> Vec<Patch> {
    patch_origins(dims, spec)
        .into_iter()
        .map(|origin| Patch {
            origin,
            values: crop(data, dims, origin, spec.size, spec.pad_value),
        })
        .collect()
}

/// Per-voxel mean of all patches covering it. Parts of patches that fall in
/// the padding are dropped.
pub fn reaggregate(
    patch_outputs: &[Vec<f32>],
    origins: &[[usize; 3]],
    size: [usize; 3],
    out_dims: [usize; 3],
) -> Result<Vec<f32>> {
    assert_eq!(patch_outputs.len(), origins.len(), "one origin per patch");
    let n: usize = out_dims.iter().product();
    let mut sum = vec![0.0f64; n];
    let mut count = vec![0u32; n];
    for (values, origin) in patch_outputs.iter().zip(origins) {
        assert_eq!(values.len(), size.iter().product::<usize>(), "patch size mismatch");
        let mut it = values.iter();
        for k in 0..size[2] {
            for j in 0..size[1] {
                for i in 0..size[0] {
                    let v = *it.next().expect("length checked");
                    let (x, y, z) = (origin[0] + i, origin[1] + j, origin[2] + k);
                    if x < out_dims[0] && y < out_dims[1] && z < out_dims[2] {
                        let idx = x + out_dims[0] * (y + out_dims[1] * z);
                        sum[idx] += v as f64;
                        count[idx] += 1;
                    }
                }
            }
        }
    }
    sum.iter()
        .zip(&count)
        .enumerate()
        .map(|(idx, (&s, &c))| {
            if c == 0 {
                let g = Grid {
                    dims: out_dims,
                    spacing: [1.0; 3],
                    origin: [0.0; 3],
                };
                Err(CoreError::Uncovered(g.coords(idx)))
            } else if c == 1 {
                Ok(s as f32)
            } else {
                Ok((s / c as f64) as f32)
            }
        })
        .collect()
}

/// A training sample cut from one case.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPatch {
    pub origin: [usize; 3],
    pub values: Vec<f32>,
    pub labels: Vec<u8>,
}

fn uniform_origin(dims: [usize; 3], size: [usize; 3], rng: &mut impl Rng) -> [usize; 3] {
    std::array::from_fn(|a| rng.random_range(0..=dims[a].saturating_sub(size[a])))
}

fn has_foreground(mask: &LabelVolume, origin: [usize; 3], size: [usize; 3]) -> bool {
    let dims = mask.dims();
    (origin[2]..(origin[2] + size[2]).min(dims[2])).any(|k| {
        (origin[1]..(origin[1] + size[1]).min(dims[1])).any(|j| {
            (origin[0]..(origin[0] + size[0]).min(dims[0])).any(|i| mask.get(i, j, k) > 0)
        })
    })
}

/// Draw a training patch: uniform origin with probability 0.5, otherwise an
/// origin whose patch holds foreground (rejection sampled, uniform fallback).
pub fn sample_training_patch(
    volume: &Volume3,
    mask: &LabelVolume,
    spec: &PatchSpec,
    rng: &mut impl Rng,
) -> TrainingPatch {
    assert_eq!(volume.dims(), mask.dims(), "volume and mask grids differ");
    let dims = volume.dims();
    let want_foreground = rng.random_bool(1.0 - UNIFORM_PROBABILITY);
    let any_foreground = mask.labels().iter().any(|&l| l > 0);
    let origin = if want_foreground && any_foreground {
        (0..FOREGROUND_TRIES)
            .map(|_| uniform_origin(dims, spec.size, rng))
            .find(|&o| has_foreground(mask, o, spec.size))
            .unwrap_or_else(|| uniform_origin(dims, spec.size, rng))
    } else {
        uniform_origin(dims, spec.size, rng)
    };
    TrainingPatch {
        origin,
        values: crop(volume.values(), dims, origin, spec.size, spec.pad_value),
        labels: crop(mask.labels(), dims, origin, spec.size, 0),
    }
}
