//! Feldkamp–Davis–Kress reconstruction for a full circular orbit.
//!
//! Pipeline: cosine pre-weighting, row-wise Ram-Lak filtering in the spatial
//! domain, then distance-weighted backprojection with bilinear detector
//! interpolation.

use rayon::prelude::*;

use crate::error::{CoreError, Result};
use crate::projector::{ConeBeamGeometry, ProjectionSet};
use crate::volume::{Grid, Volume3};

/// Multiply each pixel by `sad / sqrt(sad² + u² + w²)`, with `(u, w)` the
/// pixel offset scaled to the isocenter plane.
pub fn cosine_weight(projections: &ProjectionSet) -> ProjectionSet {
    let weights = cosine_weights(&projections.geometry);
    let data = projections
        .frames()
        .flat_map(|frame| frame.iter().zip(&weights).map(|(&p, &w)| (p as f64 * w) as f32))
        .collect();
    projections.with_data(data)
}

fn cosine_weights(g: &ConeBeamGeometry) -> Vec<f64> {
    let scale = g.sad_mm / g.sdd_mm;
    let sad2 = g.sad_mm * g.sad_mm;
    let mut w = Vec::with_capacity(g.frame_len());
    for row in 0..g.det_rows {
        let v = g.row_offset(row) * scale;
        for col in 0..g.det_cols {
            let u = g.col_offset(col) * scale;
            w.push(g.sad_mm / (sad2 + u * u + v * v).sqrt());
        }
    }
    w
}

/// Optional apodisation applied on top of the ramp kernel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RampWindow {
    #[default]
    None,
    Hann,
}

/// Band-limited discrete ramp kernel for sample spacing `tau`, indexed by
/// lag `-(len-1)..=(len-1)`.
pub fn ram_lak_kernel(len: usize, tau: f64) -> Vec<f64> {
    let half = len as isize - 1;
    (-half..=half)
        .map(|n| {
            if n == 0 {
                1.0 / (4.0 * tau * tau)
            } else if n % 2 == 0 {
                0.0
            } else {
                let d = n as f64 * std::f64::consts::PI * tau;
                -1.0 / (d * d)
            }
        })
        .collect()
}

/// Hann taper `0.5·(1 + cos(π n / N))` over the kernel lags.
fn hann_taper(kernel: &mut [f64]) {
    let half = (kernel.len() / 2) as f64;
    for (i, h) in kernel.iter_mut().enumerate() {
        let n = i as f64 - half;
        *h *= 0.5 * (1.0 + (std::f64::consts::PI * n / (half + 1.0)).cos());
    }
}

/// Convolve each detector row with the ramp kernel (zero padding, full-length
/// kernel). The kernel is scaled by the isocenter pitch so the sum
/// approximates the continuous convolution integral.
pub fn ramp_filter(projections: &ProjectionSet) -> ProjectionSet {
    ramp_filter_windowed(projections, RampWindow::None)
}

pub fn ramp_filter_windowed(projections: &ProjectionSet, window: RampWindow) -> ProjectionSet {
    let g = &projections.geometry;
    let tau = g.iso_pixel_mm();
    let cols = g.det_cols;
    let mut kernel = ram_lak_kernel(cols, tau);
    if window == RampWindow::Hann {
        hann_taper(&mut kernel);
    }
    for h in kernel.iter_mut() {
        *h *= tau;
    }
    let mut data = vec![0.0f32; projections.data.len()];
    data.par_chunks_mut(cols)
        .zip(projections.data.par_chunks(cols))
        .for_each(|(out, row)| filter_row(row, &kernel, out));
    projections.with_data(data)
}

fn filter_row(row: &[f32], kernel: &[f64], out: &mut [f32]) {
    let n = row.len();
    let center = n - 1;
    for (j, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0f64;
        for (k, &x) in row.iter().enumerate() {
            acc += x as f64 * kernel[center + j - k];
        }
        *o = acc as f32;
    }
}

/// Reconstruction options beyond the output grid.
#[derive(Clone, Copy, Debug, Default)]
pub struct FdkOptions {
    pub window: RampWindow,
}

/// Reconstruct onto a grid of `out_dims` voxels of `out_spacing` mm centred
/// on the isocenter.
pub fn fdk_reconstruct(
    projections: &ProjectionSet,
    out_dims: [usize; 3],
    out_spacing: [f64; 3],
) -> Result<Volume3> {
    fdk_reconstruct_with(projections, out_dims, out_spacing, FdkOptions::default())
}

pub fn fdk_reconstruct_with(
    projections: &ProjectionSet,
    out_dims: [usize; 3],
    out_spacing: [f64; 3],
    options: FdkOptions,
) -> Result<Volume3> {
    let g = &projections.geometry;
    g.validate()?;
    if projections.angles_rad.is_empty() || projections.data.is_empty() {
        return Err(CoreError::EmptyProjections);
    }
    let centered = Grid::centered(out_dims, out_spacing)?;
    let iso = projections.isocenter_mm;
    let grid = Grid::new(
        out_dims,
        out_spacing,
        std::array::from_fn(|a| centered.origin[a] + iso[a]),
    )?;

    let filtered = ramp_filter_windowed(&cosine_weight(projections), options.window);
    let views: Vec<(f64, f64)> = projections.angles_rad.iter().map(|a| a.sin_cos()).collect();
    let n_views = views.len() as f64;
    // Full-orbit redundancy: each ray is measured twice, hence the 1/2.
    let view_weight = 0.5 * g.arc_deg.to_radians() / n_views;
    let sad = g.sad_mm;
    let tau = g.iso_pixel_mm();
    let (rows, cols) = (g.det_rows, g.det_cols);
    let col_mid = 0.5 * (cols as f64 - 1.0);
    let row_mid = 0.5 * (rows as f64 - 1.0);

    let values: Vec<f32> = (0..grid.len())
        .into_par_iter()
        .map(|n| {
            let p = centered.position(grid.coords(n));
            let mut acc = 0.0f64;
            for (view, &(s, c)) in views.iter().enumerate() {
                let toward_source = p[0] * c + p[1] * s;
                let lateral = -p[0] * s + p[1] * c;
                let u_dist = sad - toward_source;
                let mag = sad / u_dist;
                let fc = lateral * mag / tau + col_mid;
                let fr = p[2] * mag / tau + row_mid;
                let sample = bilinear(filtered.frame(view), rows, cols, fr, fc);
                acc += mag * mag * sample;
            }
            (acc * view_weight) as f32
        })
        .collect();
    Volume3::new(grid, values)
}

#[inline]
fn bilinear(frame: &[f32], rows: usize, cols: usize, r: f64, c: f64) -> f64 {
    let r0 = r.floor();
    let c0 = c.floor();
    let (fr, fc) = (r - r0, c - c0);
    let (r0, c0) = (r0 as isize, c0 as isize);
    let at = |ri: isize, ci: isize| -> f64 {
        if ri < 0 || ci < 0 || ri >= rows as isize || ci >= cols as isize {
            0.0
        } else {
            frame[ri as usize * cols + ci as usize] as f64
        }
    };
    (1.0 - fr) * ((1.0 - fc) * at(r0, c0) + fc * at(r0, c0 + 1))
        + fr * ((1.0 - fc) * at(r0 + 1, c0) + fc * at(r0 + 1, c0 + 1))
}

/// Root-mean-square error normalised by the reference value range.
pub fn nrmse(reconstruction: &Volume3, reference: &Volume3) -> f64 {
    assert_eq!(reconstruction.dims(), reference.dims(), "nrmse needs matching grids");
    let (lo, hi) = reference
        .values()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = (hi - lo) as f64;
    let mse = reconstruction
        .values()
        .iter()
        .zip(reference.values())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum::<f64>()
        / reference.values().len() as f64;
    if range > 0.0 {
        mse.sqrt() / range
    } else {
        mse.sqrt()
    }
}
