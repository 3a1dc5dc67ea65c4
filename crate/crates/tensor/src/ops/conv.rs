//! Stride-1 3D cross-correlation via im2col and GEMM.
//!
//! Weights have shape `(out_channels, in_channels, k, k, k)`, bias
//! `(1, out_channels, 1, 1, 1)`. Column-matrix rows are ordered
//! `(in_channel, kz, ky, kx)`, matching the weight layout, so a sample's
//! output is `W · col`.

use crate::error::{shape_err, Result};
use crate::graph::{Function, Graph, Var};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding of `(k - 1) / 2`; spatial dims are preserved.
    Same,
    /// No padding; each axis shrinks by `k - 1`.
    None,
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    cin: usize,
    cout: usize,
    k: usize,
    pad: usize,
    din: [usize; 3],
    dout: [usize; 3],
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.cin * self.k * self.k * self.k
    }

    fn s_in(&self) -> usize {
        self.din.iter().product()
    }

    fn s_out(&self) -> usize {
        self.dout.iter().product()
    }

    /// Output range `[lo, hi)` along an axis whose input index
    /// `o + offset - pad` stays inside `[0, din)`.
    #[inline]
    fn valid(&self, axis: usize, offset: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(offset);
        let hi = (self.din[axis] + self.pad).saturating_sub(offset).min(self.dout[axis]);
        (lo, hi.max(lo))
    }

    /// True when the column matrix is the input itself.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.pad == 0
    }

    /// Output z-planes per slab: enough to amortise GEMM overhead while a
    /// slab's column matrix stays within the L2 cache.
    fn slab_planes(&self) -> usize {
        const TARGET: usize = 96 * 1024;
        let plane = self.dout[0] * self.dout[1];
        (TARGET / (self.rows() * plane).max(1)).clamp(1, self.dout[2])
    }
}

/// Column matrix for output planes `za..zb`, `rows × (zb - za)·plane`.
fn im2col<T: Real>(x: &[T], geo: &ConvGeom, za: usize, zb: usize, col: &mut [T]) {
    let ConvGeom { cin, k, pad, din, dout, .. } = *geo;
    let plane_out = dout[0] * dout[1];
    let len = (zb - za) * plane_out;
    let s_in = geo.s_in();
    for ci in 0..cin {
        let plane = &x[ci * s_in..(ci + 1) * s_in];
        for kz in 0..k {
            let (z0, z1) = geo.valid(2, kz);
            let (z0, z1) = (z0.max(za), z1.min(zb));
            for ky in 0..k {
                let (y0, y1) = geo.valid(1, ky);
                for kx in 0..k {
                    let (x0, x1) = geo.valid(0, kx);
                    let row = ((ci * k + kz) * k + ky) * k + kx;
                    let dst = &mut col[row * len..(row + 1) * len];
                    dst.fill(T::zero());
                    for oz in z0..z1 {
                        let iz = oz + kz - pad;
                        for oy in y0..y1 {
                            let iy = oy + ky - pad;
                            let d = ((oz - za) * dout[1] + oy) * dout[0];
                            let s = (iz * din[1] + iy) * din[0];
                            let (a, b) = (x0 + kx - pad, x1 + kx - pad);
                            dst[d + x0..d + x1].copy_from_slice(&plane[s + a..s + b]);
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`] for the same slab.
fn col2im_add<T: Real>(col: &[T], geo: &ConvGeom, za: usize, zb: usize, dx: &mut [T]) {
    let ConvGeom { cin, k, pad, din, dout, .. } = *geo;
    let plane_out = dout[0] * dout[1];
    let len = (zb - za) * plane_out;
    let s_in = geo.s_in();
    for ci in 0..cin {
        let plane = &mut dx[ci * s_in..(ci + 1) * s_in];
        for kz in 0..k {
            let (z0, z1) = geo.valid(2, kz);
            let (z0, z1) = (z0.max(za), z1.min(zb));
            for ky in 0..k {
                let (y0, y1) = geo.valid(1, ky);
                for kx in 0..k {
                    let (x0, x1) = geo.valid(0, kx);
                    let row = ((ci * k + kz) * k + ky) * k + kx;
                    let src = &col[row * len..(row + 1) * len];
                    for oz in z0..z1 {
                        let iz = oz + kz - pad;
                        for oy in y0..y1 {
                            let iy = oy + ky - pad;
                            let d = ((oz - za) * dout[1] + oy) * dout[0];
                            let s = (iz * din[1] + iy) * din[0];
                            let (a, b) = (x0 + kx - pad, x1 + kx - pad);
                            for (t, &v) in plane[s + a..s + b].iter_mut().zip(&src[d + x0..d + x1]) {
                                *t += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `Σ a·b` over sixteen interleaved partial sums, which the compiler keeps
/// in vector registers.
#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    const LANES: usize = 16;
    let mut acc = [T::zero(); LANES];
    let (ca, cb) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: T = ra.iter().zip(rb).map(|(&x, &y)| x * y).sum();
    acc.iter().copied().sum::<T>() + tail
}

/// `dW (cout × rows) += dY · colᵀ`, where output channel `co` of `dY` is
/// `gn[co * stride..][..len]` and `col` is `rows × len`. The reduction runs
/// over the long spatial axis, a shape the blocked GEMM handles poorly.
fn accumulate_dw<T: Real>(gn: &[T], stride: usize, col: &[T], cout: usize, rows: usize, len: usize, dw: &mut [T]) {
    for r in 0..rows {
        let cr = &col[r * len..(r + 1) * len];
        for co in 0..cout {
            dw[co * rows + r] += dot(&gn[co * stride..co * stride + len], cr);
        }
    }
}

struct Conv3d {
    geo: ConvGeom,
}

impl<T: Real> Function<T> for Conv3d {
    fn name(&self) -> &'static str {
        "conv3d"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        g: &[T],
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let geo = &self.geo;
        let (x, w) = (inputs[0], inputs[1]);
        let (rows, s_in, s_out, cout) = (geo.rows(), geo.s_in(), geo.s_out(), geo.cout);
        let batch = x.batch();
        let mut dx = needs[0].then(|| vec![T::zero(); x.numel()]);
        let mut dw = needs[1].then(|| vec![T::zero(); w.numel()]);
        let mut db = needs.get(2).copied().unwrap_or(false).then(|| vec![T::zero(); cout]);
        let plane = geo.dout[0] * geo.dout[1];
        let slab = geo.slab_planes();
        let scratch = if geo.is_pointwise() { 0 } else { rows * slab * plane };
        let mut col = vec![T::zero(); if dw.is_some() { scratch } else { 0 }];
        let mut dcol = vec![T::zero(); if dx.is_some() { scratch } else { 0 }];

        for n in 0..batch {
            let xn = &x.data()[n * geo.cin * s_in..(n + 1) * geo.cin * s_in];
            let gn = &g[n * cout * s_out..(n + 1) * cout * s_out];
            if let Some(db) = db.as_mut() {
                for (co, b) in db.iter_mut().enumerate() {
                    *b += gn[co * s_out..(co + 1) * s_out].iter().copied().sum::<T>();
                }
            }
            let mut dxn = dx.as_mut().map(|dx| &mut dx[n * geo.cin * s_in..(n + 1) * geo.cin * s_in]);
            if geo.is_pointwise() {
                if let Some(dw) = dw.as_mut() {
                    accumulate_dw(gn, s_out, xn, cout, rows, s_out, dw);
                }
                if let Some(dxn) = dxn {
                    // dX (rows × s) = Wᵀ (rows × cout) · dY (cout × s)
                    T::gemm(rows, cout, s_out, T::one(), w.data(), (1, rows), gn, (s_out, 1), T::zero(), dxn, (s_out, 1));
                }
                continue;
            }
            for za in (0..geo.dout[2]).step_by(slab) {
                let zb = (za + slab).min(geo.dout[2]);
                let len = (zb - za) * plane;
                let gs = &gn[za * plane..];
                if let Some(dw) = dw.as_mut() {
                    im2col(xn, geo, za, zb, &mut col);
                    accumulate_dw(gs, s_out, &col, cout, rows, len, dw);
                }
                if let Some(dxn) = dxn.as_deref_mut() {
                    T::gemm(rows, cout, len, T::one(), w.data(), (1, rows), gs, (s_out, 1), T::zero(), &mut dcol, (len, 1));
                    col2im_add(&dcol, geo, za, zb, dxn);
                }
            }
        }
        let mut out = vec![dx, dw];
        if inputs.len() > 2 {
            out.push(db);
        }
        out
    }
}

impl<T: Real> Graph<T> {
    pub fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>, padding: Padding) -> Result<Var> {
        let (xt, wt) = (self.value(x), self.value(w));
        let [cout, cin, kx, ky, kz] = wt.shape();
        if kx != ky || ky != kz || kx == 0 {
            return shape_err("conv3d", format!("kernel must be cubic, got {:?}", wt.shape()));
        }
        if xt.channels() != cin {
            return shape_err(
                "conv3d",
                format!("input has {} channels, weights expect {cin}", xt.channels()),
            );
        }
        let k = kx;
        let pad = match padding {
            Padding::Same => {
                if k % 2 == 0 {
                    return shape_err("conv3d", "same padding needs an odd kernel");
                }
                (k - 1) / 2
            }
            Padding::None => 0,
        };
        let din = xt.spatial();
        if din.iter().any(|&d| d + 2 * pad < k) {
            return shape_err("conv3d", format!("input {din:?} smaller than kernel {k}"));
        }
        let dout = din.map(|d| d + 2 * pad - k + 1);
        if let Some(b) = b {
            if self.value(b).numel() != cout {
                return shape_err("conv3d", format!("bias has {} values for {cout} filters", self.value(b).numel()));
            }
        }
        let geo = ConvGeom {
            cin,
            cout,
            k,
            pad,
            din,
            dout,
        };
        let batch = xt.batch();
        let (rows, s_in, s_out) = (geo.rows(), geo.s_in(), geo.s_out());
        let mut out = vec![T::zero(); batch * cout * s_out];
        let plane = dout[0] * dout[1];
        let slab = geo.slab_planes();
        let mut col = vec![T::zero(); if geo.is_pointwise() { 0 } else { rows * slab * plane }];
        for n in 0..batch {
            let xn = &xt.data()[n * cin * s_in..(n + 1) * cin * s_in];
            let on = &mut out[n * cout * s_out..(n + 1) * cout * s_out];
            if let Some(b) = b {
                for (co, &bv) in self.value(b).data().iter().enumerate() {
                    on[co * s_out..(co + 1) * s_out].fill(bv);
                }
            }
            if geo.is_pointwise() {
                T::gemm(cout, rows, s_out, T::one(), wt.data(), (rows, 1), xn, (s_out, 1), T::one(), on, (s_out, 1));
                continue;
            }
            for za in (0..dout[2]).step_by(slab) {
                let zb = (za + slab).min(dout[2]);
                let len = (zb - za) * plane;
                im2col(xn, &geo, za, zb, &mut col);
                let os = &mut on[za * plane..];
                T::gemm(cout, rows, len, T::one(), wt.data(), (rows, 1), &col, (len, 1), T::one(), os, (s_out, 1));
            }
        }
        let out = Tensor::new([batch, cout, dout[0], dout[1], dout[2]], out)?;
        let inputs: Vec<Var> = std::iter::once(x).chain(std::iter::once(w)).chain(b).collect();
        Ok(self.apply(&inputs, out, Conv3d { geo }))
    }
}
