use crate::error::{shape_err, Result};
use crate::graph::{Function, Graph, Var};
use crate::real::Real;
use crate::tensor::Tensor;

struct MaxPool2 {
    argmax: Vec<usize>,
}

impl<T: Real> Function<T> for MaxPool2 {
    fn name(&self) -> &'static str {
        "maxpool3d_2"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        let mut dx = vec![T::zero(); inputs[0].numel()];
        for (&src, &gy) in self.argmax.iter().zip(g) {
            dx[src] += gy;
        }
        vec![Some(dx)]
    }
}

struct Upsample2 {
    din: [usize; 3],
}

impl<T: Real> Function<T> for Upsample2 {
    fn name(&self) -> &'static str {
        "upsample3d_2"
    }

    fn backward(&self, inputs: &[&Tensor<T>], out: &Tensor<T>, g: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        let d = self.din;
        let s_in = d[0] * d[1] * d[2];
        let s_out = out.spatial_len();
        let [ox, oy, _] = out.spatial();
        let mut dx = vec![T::zero(); inputs[0].numel()];
        for (plane, gp) in dx.chunks_mut(s_in).zip(g.chunks(s_out)) {
            for (o, &gv) in gp.iter().enumerate() {
                let (x, y, z) = (o % ox, (o / ox) % oy, o / (ox * oy));
                plane[x / 2 + d[0] * (y / 2 + d[1] * (z / 2))] += gv;
            }
        }
        vec![Some(dx)]
    }
}

impl<T: Real> Graph<T> {
    /// 2×2×2 max pooling with stride 2. Ties resolve to the first voxel in
    /// x-fastest scan order.
    pub fn maxpool3d_2(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        let d = xt.spatial();
        if d.iter().any(|&n| n % 2 != 0) {
            return shape_err("maxpool3d_2", format!("spatial dims {d:?} must be even"));
        }
        let o = d.map(|n| n / 2);
        let (s_in, s_out) = (xt.spatial_len(), o[0] * o[1] * o[2]);
        let planes = xt.batch() * xt.channels();
        let mut out = Vec::with_capacity(planes * s_out);
        let mut argmax = Vec::with_capacity(planes * s_out);
        for p in 0..planes {
            let base = p * s_in;
            let plane = &xt.data()[base..base + s_in];
            for z in 0..o[2] {
                for y in 0..o[1] {
                    for xi in 0..o[0] {
                        let mut best = 2 * xi + d[0] * (2 * y + d[1] * 2 * z);
                        for dz in 0..2 {
                            for dy in 0..2 {
                                for dx in 0..2 {
                                    let i = (2 * xi + dx) + d[0] * ((2 * y + dy) + d[1] * (2 * z + dz));
                                    if plane[i] > plane[best] {
                                        best = i;
                                    }
                                }
                            }
                        }
                        out.push(plane[best]);
                        argmax.push(base + best);
                    }
                }
            }
        }
        let shape = [xt.batch(), xt.channels(), o[0], o[1], o[2]];
        let out = Tensor::new(shape, out)?;
        Ok(self.apply(&[x], out, MaxPool2 { argmax }))
    }

    /// Nearest-neighbour ×2 upsampling.
    pub fn upsample3d_2(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let d = xt.spatial();
        let o = d.map(|n| 2 * n);
        let s_in = xt.spatial_len();
        let mut out = Vec::with_capacity(xt.numel() * 8);
        for plane in xt.data().chunks(s_in) {
            for z in 0..o[2] {
                for y in 0..o[1] {
                    let row = d[0] * (y / 2 + d[1] * (z / 2));
                    for xi in 0..o[0] {
                        out.push(plane[row + xi / 2]);
                    }
                }
            }
        }
        let shape = [xt.batch(), xt.channels(), o[0], o[1], o[2]];
        let out = Tensor::new(shape, out).expect("upsampled length matches");
        self.apply(&[x], out, Upsample2 { din: d })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_constant_and_block_max() {
        let mut g = Graph::<f32>::new();
        let c = g.constant(Tensor::full([1, 2, 4, 4, 2], 3.0));
        let p = g.maxpool3d_2(c).unwrap();
        assert_eq!(g.value(p).shape(), [1, 2, 2, 2, 1]);
        assert!(g.value(p).data().iter().all(|&v| v == 3.0));

        let b = g.constant(Tensor::new([1, 1, 2, 2, 2], (0..8).map(|v| v as f32).collect()).unwrap());
        let p = g.maxpool3d_2(b).unwrap();
        assert_eq!(g.value(p).data(), &[7.0]);

        let odd = g.constant(Tensor::zeros([1, 1, 3, 2, 2]));
        assert!(g.maxpool3d_2(odd).is_err());
    }

    #[test]
    fn pool_routes_gradient_to_argmax() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::new([1, 1, 2, 2, 2], vec![0.0, 5.0, 1.0, 2.0, 3.0, 4.0, 0.5, 1.5]).unwrap());
        let p = g.maxpool3d_2(x).unwrap();
        let l = g.weighted_sum(p, &[2.0]).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn upsample_replicates_and_block_mean_inverts() {
        let mut g = Graph::<f64>::new();
        let one = g.constant(Tensor::full([1, 1, 1, 1, 1], 4.5));
        let u = g.upsample3d_2(one);
        assert_eq!(g.value(u).data(), &[4.5; 8]);

        let data: Vec<f64> = (0..24).map(|v| v as f64 * 0.5).collect();
        let xt = Tensor::new([1, 2, 3, 2, 2], data).unwrap();
        let x = g.constant(xt.clone());
        let u = g.upsample3d_2(x);
        let ut = g.value(u);
        let [ox, oy, _] = ut.spatial();
        for c in 0..2 {
            let plane = ut.plane(0, c);
            for (i, &v) in xt.plane(0, c).iter().enumerate() {
                let (x0, y0, z0) = (i % 3, (i / 3) % 2, i / 6);
                let mut sum = 0.0;
                for n in 0..8 {
                    let (dx, dy, dz) = (n & 1, (n >> 1) & 1, n >> 2);
                    sum += plane[(2 * x0 + dx) + ox * ((2 * y0 + dy) + oy * (2 * z0 + dz))];
                }
                assert_eq!(sum / 8.0, v);
            }
        }
    }
}
