//! Circular-orbit cone-beam forward projection with exact voxel traversal.
//!
//! Coordinates are relative to the isocenter. At view angle θ the source sits
//! at `sad·(cos θ, sin θ, 0)` and the flat detector is centred at
//! `-(sdd - sad)·(cos θ, sin θ, 0)`, with columns running along
//! `(-sin θ, cos θ, 0)` and rows along `+z`.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::io::{decode_f32, encode_f32, read_bytes, read_json, write_json, ENCODING_F32};
use crate::volume::{Grid, Volume3};

pub const DEFAULT_ARC_DEG: f64 = 360.0;
pub const DEFAULT_SAD_MM: f64 = 600.0;
pub const DEFAULT_SDD_MM: f64 = 1000.0;
/// Detector margin around the projected circumscribed sphere.
pub const DEFAULT_DETECTOR_MARGIN: f64 = 0.10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeBeamGeometry {
    pub n_proj: usize,
    pub arc_deg: f64,
    pub sad_mm: f64,
    pub sdd_mm: f64,
    pub det_rows: usize,
    pub det_cols: usize,
    pub pixel_mm: f64,
}

impl ConeBeamGeometry {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(CoreError::InvalidGeometry(msg));
        if self.n_proj == 0 {
            return fail("n_proj must be at least 1".into());
        }
        if !(self.arc_deg > 0.0 && self.arc_deg <= 360.0) {
            return fail(format!("arc_deg {} outside (0, 360]", self.arc_deg));
        }
        if !(self.sad_mm > 0.0 && self.sdd_mm > self.sad_mm) {
            return fail(format!(
                "need sdd_mm > sad_mm > 0, got sad {} sdd {}",
                self.sad_mm, self.sdd_mm
            ));
        }
        if self.det_rows == 0 || self.det_cols == 0 {
            return fail("detector needs at least one row and column".into());
        }
        if !(self.pixel_mm > 0.0 && self.pixel_mm.is_finite()) {
            return fail(format!("pixel_mm {} must be positive", self.pixel_mm));
        }
        Ok(())
    }

    /// Full-circle geometry whose detector covers the grid's circumscribed
    /// sphere with a 10% margin. Pixel pitch at the isocenter is half the
    /// smallest voxel spacing; coarser pitches put an edge-blur floor under
    /// the reconstruction error that hides the effect of the view count.
    pub fn default_for(grid: &Grid, n_proj: usize) -> Self {
        let (sad, sdd) = (DEFAULT_SAD_MM, DEFAULT_SDD_MM);
        let extent = grid.extent();
        let radius = 0.5 * extent.iter().map(|e| e * e).sum::<f64>().sqrt();
        let min_spacing = grid.spacing.iter().cloned().fold(f64::INFINITY, f64::min);
        let pixel_mm = 0.5 * min_spacing * sdd / sad;
        // Tangent-cone projection of the sphere onto the detector plane.
        let half_width = radius * sdd / (sad * sad - radius * radius).sqrt();
        let half_width = half_width * (1.0 + DEFAULT_DETECTOR_MARGIN);
        let count = 2 * (half_width / pixel_mm).ceil() as usize;
        ConeBeamGeometry {
            n_proj,
            arc_deg: DEFAULT_ARC_DEG,
            sad_mm: sad,
            sdd_mm: sdd,
            det_rows: count,
            det_cols: count,
            pixel_mm,
        }
    }

    /// Detector-plane offset of a column centre (mm).
    #[inline]
    pub fn col_offset(&self, col: usize) -> f64 {
        (col as f64 - 0.5 * (self.det_cols as f64 - 1.0)) * self.pixel_mm
    }

    #[inline]
    pub fn row_offset(&self, row: usize) -> f64 {
        (row as f64 - 0.5 * (self.det_rows as f64 - 1.0)) * self.pixel_mm
    }

    /// Detector pitch scaled back to the isocenter plane.
    pub fn iso_pixel_mm(&self) -> f64 {
        self.pixel_mm * self.sad_mm / self.sdd_mm
    }

    pub fn frame_len(&self) -> usize {
        self.det_rows * self.det_cols
    }
}

/// `n_proj` angles evenly spaced over the arc, starting at 0, half-open.
pub fn make_angles(geometry: &ConeBeamGeometry) -> Vec<f64> {
    let step = geometry.arc_deg.to_radians() / geometry.n_proj as f64;
    (0..geometry.n_proj).map(|i| i as f64 * step).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionSet {
    pub geometry: ConeBeamGeometry,
    pub angles_rad: Vec<f64>,
    /// Physical position of the rotation axis.
    pub isocenter_mm: [f64; 3],
    /// Line integrals laid out `[angle][row][col]`.
    pub data: Vec<f32>,
}

impl ProjectionSet {
    pub fn new(
        geometry: ConeBeamGeometry,
        angles_rad: Vec<f64>,
        isocenter_mm: [f64; 3],
        data: Vec<f32>,
    ) -> Result<Self> {
        geometry.validate()?;
        if angles_rad.len() != geometry.n_proj {
            return Err(CoreError::InvalidGeometry(format!(
                "{} angles for n_proj {}",
                angles_rad.len(),
                geometry.n_proj
            )));
        }
        let expected = geometry.n_proj * geometry.frame_len();
        if data.len() != expected {
            return Err(CoreError::InvalidGeometry(format!(
                "{} projection values, expected {expected}",
                data.len()
            )));
        }
        Ok(ProjectionSet {
            geometry,
            angles_rad,
            isocenter_mm,
            data,
        })
    }

    pub fn frame(&self, view: usize) -> &[f32] {
        let n = self.geometry.frame_len();
        &self.data[view * n..(view + 1) * n]
    }

    pub fn frames(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.geometry.frame_len())
    }

    /// Same geometry, new data.
    pub fn with_data(&self, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), self.data.len());
        ProjectionSet {
            geometry: self.geometry.clone(),
            angles_rad: self.angles_rad.clone(),
            isocenter_mm: self.isocenter_mm,
            data,
        }
    }
}

/// Line integral of a piecewise-constant volume along the segment `p0 → p1`
/// (physical mm), by stepping through every voxel boundary the segment
/// crosses. Segments that miss the volume integrate to zero.
pub fn ray_integral(volume: &Volume3, p0: [f64; 3], p1: [f64; 3]) -> f64 {
    let grid = volume.grid();
    let lo = grid.lower_corner();
    let ext = grid.extent();
    let d: [f64; 3] = std::array::from_fn(|a| p1[a] - p0[a]);
    let length = d.iter().map(|x| x * x).sum::<f64>().sqrt();
    if length == 0.0 {
        return 0.0;
    }

    // Parametric entry/exit of the bounding box, clipped to the segment.
    let (mut t_in, mut t_out) = (0.0f64, 1.0f64);
    for a in 0..3 {
        if d[a] == 0.0 {
            if p0[a] < lo[a] || p0[a] > lo[a] + ext[a] {
                return 0.0;
            }
        } else {
            let ta = (lo[a] - p0[a]) / d[a];
            let tb = (lo[a] + ext[a] - p0[a]) / d[a];
            t_in = t_in.max(ta.min(tb));
            t_out = t_out.min(ta.max(tb));
        }
    }
    if t_in >= t_out {
        return 0.0;
    }

    let mut idx = [0isize; 3];
    let mut step = [0isize; 3];
    let mut t_next = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    let t_mid = 0.5 * (t_in + t_out);
    for a in 0..3 {
        let n = grid.dims[a] as isize;
        let s = grid.spacing[a];
        // Entry voxel, located from a point just inside along this axis.
        let entry = p0[a] + d[a] * t_in;
        let mut i = ((entry - lo[a]) / s).floor() as isize;
        if d[a] == 0.0 {
            i = ((p0[a] + d[a] * t_mid - lo[a]) / s).floor() as isize;
        } else if d[a] < 0.0 && (entry - lo[a]) / s == i as f64 {
            i -= 1;
        }
        idx[a] = i.clamp(0, n - 1);
        if d[a] > 0.0 {
            step[a] = 1;
            t_delta[a] = s / d[a];
            t_next[a] = (lo[a] + (idx[a] + 1) as f64 * s - p0[a]) / d[a];
        } else if d[a] < 0.0 {
            step[a] = -1;
            t_delta[a] = -s / d[a];
            t_next[a] = (lo[a] + idx[a] as f64 * s - p0[a]) / d[a];
        }
    }

    let values = volume.values();
    let [nx, ny, nz] = grid.dims.map(|n| n as isize);
    let mut t = t_in;
    let mut sum = 0.0f64;
    loop {
        let axis = if t_next[0] <= t_next[1] && t_next[0] <= t_next[2] {
            0
        } else if t_next[1] <= t_next[2] {
            1
        } else {
            2
        };
        let t_exit = t_next[axis].min(t_out);
        if t_exit > t {
            let v = values[(idx[0] + nx * (idx[1] + ny * idx[2])) as usize] as f64;
            sum += v * (t_exit - t);
            t = t_exit;
        }
        if t_exit >= t_out {
            break;
        }
        idx[axis] += step[axis];
        t_next[axis] += t_delta[axis];
        if idx[axis] < 0 || idx[axis] >= [nx, ny, nz][axis] {
            break;
        }
    }
    sum * length
}

/// Source and detector-pixel positions for one view, relative to the isocenter.
pub(crate) struct ViewFrame {
    pub source: [f64; 3],
    pub det_center: [f64; 3],
    pub u_axis: [f64; 3],
}

impl ViewFrame {
    pub fn new(geometry: &ConeBeamGeometry, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let back = geometry.sdd_mm - geometry.sad_mm;
        ViewFrame {
            source: [geometry.sad_mm * c, geometry.sad_mm * s, 0.0],
            det_center: [-back * c, -back * s, 0.0],
            u_axis: [-s, c, 0.0],
        }
    }

    pub fn pixel(&self, u: f64, w: f64) -> [f64; 3] {
        [
            self.det_center[0] + u * self.u_axis[0],
            self.det_center[1] + u * self.u_axis[1],
            self.det_center[2] + w,
        ]
    }
}

/// Forward-project a volume. The rotation axis passes through the volume
/// centre.
pub fn simulate_projections(volume: &Volume3, geometry: &ConeBeamGeometry) -> Result<ProjectionSet> {
    geometry.validate()?;
    if volume.grid().is_empty() {
        return Err(CoreError::InvalidVolume("empty volume".into()));
    }
    let angles = make_angles(geometry);
    let iso = volume.grid().center();
    let shift = |p: [f64; 3]| -> [f64; 3] { std::array::from_fn(|a| p[a] + iso[a]) };
    let frame_len = geometry.frame_len();
    let mut data = vec![0.0f32; geometry.n_proj * frame_len];
    data.par_chunks_mut(frame_len)
        .zip(angles.par_iter())
        .for_each(|(frame, &angle)| {
            let view = ViewFrame::new(geometry, angle);
            let src = shift(view.source);
            for row in 0..geometry.det_rows {
                let w = geometry.row_offset(row);
                for col in 0..geometry.det_cols {
                    let pix = shift(view.pixel(geometry.col_offset(col), w));
                    frame[row * geometry.det_cols + col] = ray_integral(volume, src, pix) as f32;
                }
            }
        });
    ProjectionSet::new(geometry.clone(), angles, iso, data)
}

#[derive(Serialize, Deserialize)]
struct ProjectionSidecar {
    #[serde(flatten)]
    geometry: ConeBeamGeometry,
    angles_rad: Vec<f64>,
    isocenter_mm: [f64; 3],
    encoding: String,
}

/// Write `<path>.proj` and `<path>.json`.
pub fn save_projections(set: &ProjectionSet, path: &Path) -> Result<()> {
    let payload = path.with_extension("proj");
    fs::write(&payload, encode_f32(&set.data)).map_err(|e| CoreError::io(&payload, e))?;
    write_json(
        &path.with_extension("json"),
        &ProjectionSidecar {
            geometry: set.geometry.clone(),
            angles_rad: set.angles_rad.clone(),
            isocenter_mm: set.isocenter_mm,
            encoding: ENCODING_F32.into(),
        },
    )
}

pub fn load_projections(path: &Path) -> Result<ProjectionSet> {
    let meta: ProjectionSidecar = read_json(&path.with_extension("json"))?;
    if meta.encoding != ENCODING_F32 {
        return Err(CoreError::UnknownEncoding(meta.encoding));
    }
    meta.geometry.validate()?;
    let payload = path.with_extension("proj");
    let bytes = read_bytes(&payload)?;
    let expected = meta.geometry.n_proj * meta.geometry.frame_len();
    let data = decode_f32(&payload, &bytes, expected)?;
    ProjectionSet::new(meta.geometry, meta.angles_rad, meta.isocenter_mm, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(n: usize, side: f64, value: f32) -> Volume3 {
        let grid = Grid::centered([n; 3], [side / n as f64; 3]).unwrap();
        Volume3::filled(grid, value)
    }

    fn geom(n_proj: usize) -> ConeBeamGeometry {
        ConeBeamGeometry {
            n_proj,
            arc_deg: 360.0,
            sad_mm: 100.0,
            sdd_mm: 150.0,
            det_rows: 8,
            det_cols: 12,
            pixel_mm: 3.0,
        }
    }

    #[test]
    fn angles_uniform_half_open() {
        let a = make_angles(&geom(4));
        let deg: Vec<f64> = a.iter().map(|x| x.to_degrees()).collect();
        for (got, want) in deg.iter().zip([0.0, 90.0, 180.0, 270.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert_eq!(make_angles(&geom(1)), vec![0.0]);
        let a = make_angles(&geom(490));
        let step = a[1] - a[0];
        assert!(a.windows(2).all(|w| ((w[1] - w[0]) - step).abs() < 1e-12));
    }

    #[test]
    fn geometry_validation() {
        let mut g = geom(4);
        g.sdd_mm = 50.0;
        assert!(g.validate().is_err());
        let mut g = geom(0);
        assert!(g.validate().is_err());
        g.n_proj = 1;
        g.arc_deg = 0.0;
        assert!(g.validate().is_err());
    }

    #[test]
    fn zero_volume_integrates_to_zero() {
        let v = cube(4, 4.0, 0.0);
        assert_eq!(ray_integral(&v, [-9.0, 0.3, 0.1], [9.0, -0.2, 0.4]), 0.0);
    }

    #[test]
    fn axis_aligned_chord() {
        let side = 7.0;
        let v = cube(7, side, 1.0);
        let got = ray_integral(&v, [-20.0, 0.0, 0.0], [20.0, 0.0, 0.0]);
        assert!((got - side).abs() < 1e-9 * side, "{got}");
        // Ray along a voxel face.
        let got = ray_integral(&v, [0.5, -20.0, 0.5], [0.5, 20.0, 0.5]);
        assert!((got - side).abs() < 1e-9 * side, "{got}");
    }

    #[test]
    fn corner_to_corner_diagonal() {
        let v = cube(5, 1.0, 1.0);
        let got = ray_integral(&v, [-0.5; 3], [0.5; 3]);
        assert!((got - 3f64.sqrt()).abs() < 1e-9, "{got}");
        let got = ray_integral(&v, [0.5; 3], [-0.5; 3]);
        assert!((got - 3f64.sqrt()).abs() < 1e-9, "{got}");
    }

    #[test]
    fn miss_and_partial_segments() {
        let v = cube(4, 4.0, 1.0);
        assert_eq!(ray_integral(&v, [-9.0, 5.0, 0.0], [9.0, 5.0, 0.0]), 0.0);
        // Segment ending at the centre covers half the chord.
        let got = ray_integral(&v, [-9.0, 0.1, 0.1], [0.0, 0.1, 0.1]);
        assert!((got - 2.0).abs() < 1e-12);
    }

    #[test]
    fn weighted_voxels() {
        let grid = Grid::new([3, 1, 1], [1.0; 3], [0.0; 3]).unwrap();
        let v = Volume3::new(grid, vec![1.0, 2.0, 4.0]).unwrap();
        let got = ray_integral(&v, [-1.0, 0.0, 0.0], [5.0, 0.0, 0.0]);
        assert!((got - 7.0).abs() < 1e-12);
        let got = ray_integral(&v, [0.0, 0.0, 0.0], [2.0, 0.0, 0.0]);
        assert!((got - (0.5 + 2.0 + 2.0)).abs() < 1e-12);
    }

    #[test]
    fn reversal_symmetry() {
        let (v, _) = crate::phantom::make_phantom([16; 3], 1).unwrap();
        let rays = [
            ([-20.0, -3.0, 1.0], [20.0, 4.5, -2.0]),
            ([3.3, -30.0, 7.0], [-2.0, 30.0, -6.0]),
            ([-10.0, -10.0, -10.0], [10.0, 9.0, 11.0]),
        ];
        for (a, b) in rays {
            let f = ray_integral(&v, a, b);
            let r = ray_integral(&v, b, a);
            assert!(f > 0.0);
            assert!((f - r).abs() <= 1e-9 * f.abs());
        }
    }

    #[test]
    fn projections_zero_and_linear() {
        let (v, _) = crate::phantom::make_phantom([16; 3], 2).unwrap();
        let g = geom(6);
        let zero = simulate_projections(&Volume3::zeros(*v.grid()), &g).unwrap();
        assert!(zero.data.iter().all(|&x| x == 0.0));
        let p = simulate_projections(&v, &g).unwrap();
        let p2 = simulate_projections(&v.map(|x| 2.0 * x), &g).unwrap();
        assert!(p.data.iter().zip(&p2.data).all(|(a, b)| 2.0 * a == *b));
        assert!(p.data.iter().all(|&x| x >= 0.0));
        assert!(p.data.iter().any(|&x| x > 0.0));
    }

    #[test]
    fn opposite_views_mirror() {
        // Centred ball phantom on an even grid.
        let n = 16;
        let grid = Grid::centered([n; 3], [1.0; 3]).unwrap();
        let values = (0..grid.len())
            .map(|i| {
                let p = grid.position(grid.coords(i));
                if p.iter().map(|x| x * x).sum::<f64>() <= 36.0 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let v = Volume3::new(grid, values).unwrap();
        let mut g = ConeBeamGeometry::default_for(&grid, 8);
        g.n_proj = 8;
        let p = simulate_projections(&v, &g).unwrap();
        let cols = g.det_cols;
        for view in 0..4 {
            let (a, b) = (p.frame(view), p.frame(view + 4));
            for r in 0..g.det_rows {
                for c in 0..cols {
                    let x = a[r * cols + c];
                    let y = b[r * cols + cols - 1 - c];
                    assert!((x - y).abs() <= 1e-5 * x.abs().max(1.0), "{view} {r} {c}: {x} {y}");
                }
            }
        }
    }

    #[test]
    fn projection_file_round_trip() {
        let v = cube(8, 8.0, 0.5);
        let p = simulate_projections(&v, &geom(3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("p");
        save_projections(&p, &base).unwrap();
        assert_eq!(load_projections(&base).unwrap(), p);
        std::fs::remove_file(base.with_extension("json")).unwrap();
        assert!(matches!(load_projections(&base), Err(CoreError::MissingFile(_))));
    }
}
