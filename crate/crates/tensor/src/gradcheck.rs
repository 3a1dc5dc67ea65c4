//! Central finite-difference oracle for gradient tests.
//!
//! Independent of the backward rules: the numeric side only ever runs
//! forward passes on constant leaves.

use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Largest absolute deviation over all checked elements, divided by the
/// largest numeric gradient magnitude.
#[derive(Clone, Copy, Debug)]
pub struct GradError {
    pub max_abs: f64,
    pub scale: f64,
}

impl GradError {
    pub fn relative(&self) -> f64 {
        if self.scale > 0.0 {
            self.max_abs / self.scale
        } else {
            self.max_abs
        }
    }
}

/// Compare backpropagated gradients of the scalar `build(graph, leaves)`
/// with central differences of step `h` in every element of every input.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], h: f64, build: F) -> GradError
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &leaves);
    g.backward(out).expect("scalar output");
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let eval = |vals: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let leaves: Vec<Var> = vals.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &leaves);
        g.value(out).item()
    };

    let mut err = GradError {
        max_abs: 0.0,
        scale: 0.0,
    };
    let mut work = inputs.to_vec();
    for (i, t) in inputs.iter().enumerate() {
        for j in 0..t.numel() {
            let x0 = t.data()[j];
            work[i].data_mut()[j] = x0 + h;
            let fp = eval(&work);
            work[i].data_mut()[j] = x0 - h;
            let fm = eval(&work);
            work[i].data_mut()[j] = x0;
            let numeric = (fp - fm) / (2.0 * h);
            err.max_abs = err.max_abs.max((numeric - analytic[i][j]).abs());
            err.scale = err.scale.max(numeric.abs());
        }
    }
    err
}
