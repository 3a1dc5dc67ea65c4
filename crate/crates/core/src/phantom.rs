//! Synthetic abdominal phantom: a body ellipsoid holding a liver ellipsoid
//! with one to three tumors inside the liver.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::volume::{Grid, LabelVolume, Volume3, BACKGROUND, LIVER, TUMOR};

/// Attenuation of the body ellipsoid.
pub const BODY_ATTENUATION: f32 = 0.2;
/// Attenuation of liver tissue.
pub const LIVER_ATTENUATION: f32 = 0.45;
/// Attenuation of tumor tissue.
pub const TUMOR_ATTENUATION: f32 = 0.7;

pub const MIN_PHANTOM_DIM: usize = 16;

/// Ellipsoid in voxel-index coordinates, rotated about the z axis.
#[derive(Clone, Copy, Debug)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
    pub yaw: f64,
}

impl Ellipsoid {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let (s, c) = self.yaw.sin_cos();
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        let local = [c * d[0] + s * d[1], -s * d[0] + c * d[1], d[2]];
        local
            .iter()
            .zip(&self.semi_axes)
            .map(|(x, a)| (x / a) * (x / a))
            .sum::<f64>()
            <= 1.0
    }

    /// Point at normalised local coordinates `u` (|u| ≤ 1 lands inside).
    fn point_at(&self, u: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        let l = [u[0] * self.semi_axes[0], u[1] * self.semi_axes[1], u[2] * self.semi_axes[2]];
        [
            self.center[0] + c * l[0] - s * l[1],
            self.center[1] + s * l[0] + c * l[1],
            self.center[2] + l[2],
        ]
    }
}

/// Shapes used to draw one phantom.
#[derive(Clone, Debug)]
pub struct PhantomLayout {
    pub body: Ellipsoid,
    pub liver: Ellipsoid,
    pub tumors: Vec<Ellipsoid>,
}

fn uniform_in_ball(rng: &mut impl Rng) -> [f64; 3] {
    loop {
        let u: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        if u.iter().map(|x| x * x).sum::<f64>() <= 1.0 {
            return u;
        }
    }
}

fn sample_layout(dims: [usize; 3], rng: &mut impl Rng) -> PhantomLayout {
    let d = dims.map(|n| n as f64);
    let mid = dims.map(|n| 0.5 * (n as f64 - 1.0));
    let inplane = d[0].min(d[1]);

    let body = Ellipsoid {
        center: std::array::from_fn(|a| mid[a] + rng.random_range(-0.02..0.02) * d[a]),
        semi_axes: [
            rng.random_range(0.42..0.47) * d[0],
            rng.random_range(0.36..0.44) * d[1],
            rng.random_range(0.42..0.47) * d[2],
        ],
        yaw: 0.0,
    };
    let liver = Ellipsoid {
        center: [
            mid[0] + rng.random_range(-0.10..0.10) * d[0],
            mid[1] + rng.random_range(-0.06..0.06) * d[1],
            mid[2] + rng.random_range(-0.08..0.08) * d[2],
        ],
        semi_axes: [
            rng.random_range(0.20..0.27) * inplane,
            rng.random_range(0.14..0.20) * inplane,
            rng.random_range(0.18..0.26) * d[2],
        ],
        yaw: rng.random_range(0.0..std::f64::consts::PI),
    };
    let n_tumors = rng.random_range(1..=3);
    let min_dim = d.iter().cloned().fold(f64::INFINITY, f64::min);
    let tumors = (0..n_tumors)
        .map(|_| {
            let u = uniform_in_ball(rng).map(|x| 0.55 * x);
            let r = (rng.random_range(0.05..0.09) * min_dim).max(1.5);
            Ellipsoid {
                center: liver.point_at(u),
                semi_axes: [
                    r * rng.random_range(0.8..1.2),
                    r * rng.random_range(0.8..1.2),
                    r * rng.random_range(0.8..1.2),
                ],
                yaw: rng.random_range(0.0..std::f64::consts::PI),
            }
        })
        .collect();
    PhantomLayout {
        body,
        liver,
        tumors,
    }
}

/// Voxelise a layout. Liver is clipped to the body and tumors to the liver,
/// so label nesting holds by construction.
pub fn rasterize(grid: Grid, layout: &PhantomLayout) -> (Volume3, LabelVolume) {
    let mut values = vec![0.0f32; grid.len()];
    let mut labels = vec![BACKGROUND; grid.len()];
    for (n, (value, label)) in values.iter_mut().zip(labels.iter_mut()).enumerate() {
        let p = grid.coords(n).map(|c| c as f64);
        if !layout.body.contains(p) {
            continue;
        }
        *value = BODY_ATTENUATION;
        if !layout.liver.contains(p) {
            continue;
        }
        *value = LIVER_ATTENUATION;
        *label = LIVER;
        if layout.tumors.iter().any(|t| t.contains(p)) {
            *value = TUMOR_ATTENUATION;
            *label = TUMOR;
        }
    }
    (
        Volume3::new(grid, values).expect("phantom values are finite"),
        LabelVolume::new(grid, labels).expect("phantom labels are valid"),
    )
}

/// Deterministic phantom for `(dims, seed)` on a 1 mm grid centred at the origin.
pub fn make_phantom(dims: [usize; 3], seed: u64) -> Result<(Volume3, LabelVolume)> {
    if dims.iter().any(|&n| n < MIN_PHANTOM_DIM) {
        return Err(CoreError::PhantomTooSmall(dims, MIN_PHANTOM_DIM));
    }
    let grid = Grid::centered(dims, [1.0; 3])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let layout = sample_layout(dims, &mut rng);
        let (volume, mask) = rasterize(grid, &layout);
        if mask.histogram().iter().all(|&c| c > 0) {
            return Ok((volume, mask));
        }
    }
}
