//! Adam with bias correction.

use crate::real::Real;
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let (m, v) = params
            .into_iter()
            .map(|p| (vec![T::zero(); p.numel()], vec![T::zero(); p.numel()]))
            .unzip();
        AdamState { step: 0, m, v }
    }
}

/// One Adam update of every parameter from its gradient.
pub fn adam_step<'a, T: Real>(
    params: impl IntoIterator<Item = &'a mut Tensor<T>>,
    grads: &[&[T]],
    state: &mut AdamState<T>,
    lr: f64,
) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    let (b1, b2) = (T::lit(ADAM_BETA1), T::lit(ADAM_BETA2));
    let (one_b1, one_b2) = (T::lit(1.0 - ADAM_BETA1), T::lit(1.0 - ADAM_BETA2));
    let step_size = T::lit(lr / bc1);
    let sqrt_bc2 = T::lit(bc2.sqrt());
    let eps = T::lit(ADAM_EPS);
    let mut count = 0;
    for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        assert_eq!(p.numel(), g.len(), "gradient length mismatch");
        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + one_b1 * gi;
            *vi = b2 * *vi + one_b2 * gi * gi;
            let denom = vi.sqrt() / sqrt_bc2 + eps;
            *w -= step_size * *mi / denom;
        }
        count += 1;
    }
    assert_eq!(count, grads.len(), "one gradient per parameter");
}
