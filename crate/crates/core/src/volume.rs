//! Scalar and label volumes on a regular voxel grid.
//!
//! All volumes store voxels x-fastest, then y, then z. Linear index of voxel
//! `(i, j, k)` is `i + nx * (j + ny * k)`.

use crate::error::{CoreError, Result};

/// Placement of a voxel grid in physical space (millimetres).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// Centre of voxel (0, 0, 0).
    pub origin: [f64; 3],
}

impl Grid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(CoreError::InvalidVolume(format!("dims {dims:?} must be positive")));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(CoreError::InvalidVolume(format!(
                "spacing {spacing:?} must be positive and finite"
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(CoreError::InvalidVolume(format!("origin {origin:?} must be finite")));
        }
        Ok(Grid {
            dims,
            spacing,
            origin,
        })
    }

    /// Unit spacing, origin chosen so the grid is centred on (0, 0, 0).
    pub fn centered(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        let origin = std::array::from_fn(|a| -0.5 * (dims[a] as f64 - 1.0) * spacing[a]);
        Grid::new(dims, spacing, origin)
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    /// Physical position of a voxel centre.
    pub fn position(&self, ijk: [usize; 3]) -> [f64; 3] {
        std::array::from_fn(|a| self.origin[a] + ijk[a] as f64 * self.spacing[a])
    }

    /// Physical centre of the grid's bounding box.
    pub fn center(&self) -> [f64; 3] {
        std::array::from_fn(|a| self.origin[a] + 0.5 * (self.dims[a] as f64 - 1.0) * self.spacing[a])
    }

    /// Lower corner of the voxel boxes (not the voxel centre).
    pub fn lower_corner(&self) -> [f64; 3] {
        std::array::from_fn(|a| self.origin[a] - 0.5 * self.spacing[a])
    }

    pub fn extent(&self) -> [f64; 3] {
        std::array::from_fn(|a| self.dims[a] as f64 * self.spacing[a])
    }

    /// Grid after factor-2 downscaling of a grid padded to even dims.
    ///
    /// The new voxel centres sit at the centres of the 2×2×2 blocks.
    pub fn halved(&self) -> Grid {
        Grid {
            dims: std::array::from_fn(|a| self.dims[a].div_ceil(2)),
            spacing: std::array::from_fn(|a| self.spacing[a] * 2.0),
            origin: std::array::from_fn(|a| self.origin[a] + 0.5 * self.spacing[a]),
        }
    }
}

/// 3D scalar field.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume3 {
    grid: Grid,
    values: Vec<f32>,
}

impl Volume3 {
    pub fn new(grid: Grid, values: Vec<f32>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(CoreError::InvalidVolume(format!(
                "{} values for dims {:?}",
                values.len(),
                grid.dims
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(CoreError::InvalidVolume(format!(
                "non-finite value at voxel {:?}",
                grid.coords(pos)
            )));
        }
        Ok(Volume3 { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        Volume3 {
            values: vec![0.0; grid.len()],
            grid,
        }
    }

    pub fn filled(grid: Grid, value: f32) -> Self {
        Volume3 {
            values: vec![value; grid.len()],
            grid,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.values[self.grid.index(i, j, k)]
    }

    /// Elementwise map, keeping the grid.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Volume3 {
        Volume3 {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum::<f64>() / self.values.len() as f64
    }
}

pub const BACKGROUND: u8 = 0;
pub const LIVER: u8 = 1;
pub const TUMOR: u8 = 2;

/// Integer labelled mask: 0 background, 1 liver, 2 tumor.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelVolume {
    grid: Grid,
    labels: Vec<u8>,
}

impl LabelVolume {
    pub fn new(grid: Grid, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != grid.len() {
            return Err(CoreError::InvalidVolume(format!(
                "{} labels for dims {:?}",
                labels.len(),
                grid.dims
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > TUMOR) {
            return Err(CoreError::InvalidVolume(format!("label {bad} outside {{0,1,2}}")));
        }
        Ok(LabelVolume { grid, labels })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> u8 {
        self.labels[self.grid.index(i, j, k)]
    }

    /// Voxel counts for background, liver and tumor.
    pub fn histogram(&self) -> [usize; 3] {
        let mut h = [0usize; 3];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }
}

/// Edge-replicated access: indices past the last voxel read the last voxel.
#[inline]
fn clamped(grid: &Grid, i: usize, j: usize, k: usize) -> usize {
    let [nx, ny, nz] = grid.dims;
    grid.index(i.min(nx - 1), j.min(ny - 1), k.min(nz - 1))
}

fn block_indices(grid: &Grid, out: [usize; 3]) -> [usize; 8] {
    let mut idx = [0usize; 8];
    for (n, slot) in idx.iter_mut().enumerate() {
        let (di, dj, dk) = (n & 1, (n >> 1) & 1, (n >> 2) & 1);
        *slot = clamped(grid, 2 * out[0] + di, 2 * out[1] + dj, 2 * out[2] + dk);
    }
    idx
}

/// Factor-2 downscale by 2×2×2 block mean. Odd axes are padded by edge
/// replication first.
pub fn downsample2(volume: &Volume3) -> Volume3 {
    let src = volume.grid();
    let grid = src.halved();
    let values = (0..grid.len())
        .map(|n| {
            let sum: f64 = block_indices(src, grid.coords(n))
                .iter()
                .map(|&i| volume.values[i] as f64)
                .sum();
            (sum / 8.0) as f32
        })
        .collect();
    Volume3 { grid, values }
}

/// Factor-2 downscale of a label mask by majority vote. Ties go to the larger
/// label so small tumors survive.
pub fn downsample2_labels(mask: &LabelVolume) -> LabelVolume {
    let src = mask.grid();
    let grid = src.halved();
    let labels = (0..grid.len())
        .map(|n| {
            let mut votes = [0u8; 3];
            for i in block_indices(src, grid.coords(n)) {
                votes[mask.labels[i] as usize] += 1;
            }
            majority(votes)
        })
        .collect();
    LabelVolume { grid, labels }
}

pub(crate) fn majority(votes: [u8; 3]) -> u8 {
    let mut best = 0u8;
    for label in 1..3u8 {
        if votes[label as usize] >= votes[best as usize] {
            best = label;
        }
    }
    best
}

/// Linear window mapping `lo -> 0`, `hi -> 1`, clamped to [0, 1].
pub fn normalize_intensity(volume: &Volume3, window_lo: f32, window_hi: f32) -> Result<Volume3> {
    if !(window_hi > window_lo) {
        return Err(CoreError::InvalidVolume(format!(
            "empty intensity window [{window_lo}, {window_hi}]"
        )));
    }
    let width = window_hi - window_lo;
    Ok(volume.map(|v| ((v - window_lo) / width).clamp(0.0, 1.0)))
}
