//! Per-channel batch normalisation over `(batch, x, y, z)`.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::graph::{Function, Graph, Var};
use crate::real::Real;
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running statistics of one batch-norm layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BnState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BnState {
    pub fn new(channels: usize) -> Self {
        BnState {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }
}

struct BatchNorm<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    /// Train mode couples elements through the batch statistics.
    batch_stats: bool,
}

impl<T: Real> Function<T> for BatchNorm<T> {
    fn name(&self) -> &'static str {
        "batchnorm3d"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let x = inputs[0];
        let gamma = inputs[1].data();
        let (nb, c, s) = (x.batch(), x.channels(), x.spatial_len());
        let m = (nb * s) as f64;
        let mut sum_g = vec![0.0f64; c];
        let mut sum_gx = vec![0.0f64; c];
        for n in 0..nb {
            for ch in 0..c {
                let base = (n * c + ch) * s;
                for i in base..base + s {
                    sum_g[ch] += g[i].as_f64();
                    sum_gx[ch] += (g[i] * self.xhat[i]).as_f64();
                }
            }
        }
        let dx = needs[0].then(|| {
            let mut dx = vec![T::zero(); x.numel()];
            for n in 0..nb {
                for ch in 0..c {
                    let base = (n * c + ch) * s;
                    let k = gamma[ch] * self.inv_std[ch];
                    if self.batch_stats {
                        let mean_g = T::lit(sum_g[ch] / m);
                        let mean_gx = T::lit(sum_gx[ch] / m);
                        for i in base..base + s {
                            dx[i] = k * (g[i] - mean_g - self.xhat[i] * mean_gx);
                        }
                    } else {
                        for i in base..base + s {
                            dx[i] = k * g[i];
                        }
                    }
                }
            }
            dx
        });
        let dgamma = needs[1].then(|| sum_gx.iter().map(|&v| T::lit(v)).collect());
        let dbeta = needs[2].then(|| sum_g.iter().map(|&v| T::lit(v)).collect());
        vec![dx, dgamma, dbeta]
    }
}

impl<T: Real> Graph<T> {
    /// `scale` and `shift` have shape `(1, C, 1, 1, 1)`. Train mode
    /// normalises with batch statistics (biased variance) and folds them into
    /// `state` with momentum 0.1 (unbiased variance); eval mode uses `state`.
    pub fn batchnorm3d(&mut self, x: Var, scale: Var, shift: Var, state: &mut BnState, mode: Mode) -> Result<Var> {
        let xt = self.value(x);
        let (nb, c, s) = (xt.batch(), xt.channels(), xt.spatial_len());
        if self.value(scale).numel() != c || self.value(shift).numel() != c || state.channels() != c {
            return shape_err("batchnorm3d", format!("{c} channels but parameters/state disagree"));
        }
        let m = nb * s;
        let (mean, inv_std): (Vec<f64>, Vec<f64>) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0f64; c];
                let mut var = vec![0.0f64; c];
                for ch in 0..c {
                    let vals = (0..nb).flat_map(|n| xt.plane(n, ch).iter().map(|v| v.as_f64()));
                    let mu = vals.clone().sum::<f64>() / m as f64;
                    let v = vals.map(|x| (x - mu) * (x - mu)).sum::<f64>() / m as f64;
                    mean[ch] = mu;
                    var[ch] = v;
                }
                let unbias = if m > 1 { m as f64 / (m as f64 - 1.0) } else { 1.0 };
                for ch in 0..c {
                    state.running_mean[ch] = (1.0 - BN_MOMENTUM) * state.running_mean[ch] + BN_MOMENTUM * mean[ch];
                    state.running_var[ch] =
                        (1.0 - BN_MOMENTUM) * state.running_var[ch] + BN_MOMENTUM * var[ch] * unbias;
                }
                let inv = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                (mean, inv)
            }
            Mode::Eval => (
                state.running_mean.clone(),
                state.running_var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect(),
            ),
        };
        let gamma = self.value(scale).data();
        let beta = self.value(shift).data();
        let mut xhat = vec![T::zero(); xt.numel()];
        let mut out = vec![T::zero(); xt.numel()];
        for n in 0..nb {
            for ch in 0..c {
                let base = (n * c + ch) * s;
                let (mu, is) = (T::lit(mean[ch]), T::lit(inv_std[ch]));
                for i in base..base + s {
                    let h = (xt.data()[i] - mu) * is;
                    xhat[i] = h;
                    out[i] = gamma[ch] * h + beta[ch];
                }
            }
        }
        let out = Tensor::new(xt.shape(), out)?;
        let func = BatchNorm {
            xhat,
            inv_std: inv_std.into_iter().map(T::lit).collect(),
            batch_stats: mode == Mode::Train,
        };
        Ok(self.apply(&[x, scale, shift], out, func))
    }
}
