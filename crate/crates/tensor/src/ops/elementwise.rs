use crate::error::{shape_err, Result};
use crate::graph::{Function, Graph, Var};
use crate::real::Real;
use crate::tensor::Tensor;

struct Relu;

impl<T: Real> Function<T> for Relu {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn backward(&self, _: &[&Tensor<T>], out: &Tensor<T>, g: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        let dx = out
            .data()
            .iter()
            .zip(g)
            .map(|(&y, &gy)| if y > T::zero() { gy } else { T::zero() })
            .collect();
        vec![Some(dx)]
    }
}

struct Sigmoid;

impl<T: Real> Function<T> for Sigmoid {
    fn name(&self) -> &'static str {
        "sigmoid"
    }

    fn backward(&self, _: &[&Tensor<T>], out: &Tensor<T>, g: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        let dx = out
            .data()
            .iter()
            .zip(g)
            .map(|(&y, &gy)| gy * y * (T::one() - y))
            .collect();
        vec![Some(dx)]
    }
}

struct Add;

impl<T: Real> Function<T> for Add {
    fn name(&self) -> &'static str {
        "add"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        needs.iter().map(|&n| n.then(|| g.to_vec())).collect()
    }
}

/// `Σ coeff_i · x_i` over same-shaped inputs.
struct LinComb<T> {
    coeffs: Vec<T>,
}

impl<T: Real> Function<T> for LinComb<T> {
    fn name(&self) -> &'static str {
        "lincomb"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        self.coeffs
            .iter()
            .zip(needs)
            .map(|(&c, &n)| n.then(|| g.iter().map(|&x| c * x).collect()))
            .collect()
    }
}

struct ConcatChannels {
    split: usize,
}

impl<T: Real> Function<T> for ConcatChannels {
    fn name(&self) -> &'static str {
        "concat_channels"
    }

    fn backward(&self, inputs: &[&Tensor<T>], out: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let s = out.spatial_len();
        let (ca, cb) = (inputs[0].channels(), inputs[1].channels());
        let ct = out.channels();
        let mut da = needs[0].then(|| Vec::with_capacity(inputs[0].numel()));
        let mut db = needs[1].then(|| Vec::with_capacity(inputs[1].numel()));
        for n in 0..out.batch() {
            let base = n * ct * s;
            if let Some(da) = da.as_mut() {
                da.extend_from_slice(&g[base..base + ca * s]);
            }
            if let Some(db) = db.as_mut() {
                db.extend_from_slice(&g[base + self.split * s..base + (self.split + cb) * s]);
            }
        }
        vec![da, db]
    }
}

/// `Σ w_i · x_i` with constant weights, reduced to a scalar.
struct WeightedSum<T> {
    weights: Vec<T>,
}

impl<T: Real> Function<T> for WeightedSum<T> {
    fn name(&self) -> &'static str {
        "weighted_sum"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        vec![Some(self.weights.iter().map(|&w| w * g[0]).collect())]
    }
}

impl<T: Real> Graph<T> {
    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.apply(&[x], y, Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| T::one() / (T::one() + (-v).exp()));
        self.apply(&[x], y, Sigmoid)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return shape_err("add", format!("{:?} vs {:?}", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(ta.shape(), data)?;
        Ok(self.apply(&[a, b], out, Add))
    }

    pub fn scale(&mut self, x: Var, k: T) -> Var {
        let y = self.value(x).map(|v| k * v);
        self.apply(&[x], y, LinComb { coeffs: vec![k] })
    }

    /// Linear combination `Σ c_i · x_i`, accumulated left to right starting
    /// from `c_0 · x_0`.
    pub fn lincomb(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        let Some(&(first, c0)) = terms.first() else {
            return shape_err("lincomb", "no terms");
        };
        let shape = self.value(first).shape();
        let mut acc: Vec<T> = self.value(first).data().iter().map(|&x| c0 * x).collect();
        for &(v, c) in &terms[1..] {
            let t = self.value(v);
            if t.shape() != shape {
                return shape_err("lincomb", format!("{:?} vs {:?}", shape, t.shape()));
            }
            acc.iter_mut().zip(t.data()).for_each(|(a, &x)| *a += c * x);
        }
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let coeffs = terms.iter().map(|t| t.1).collect();
        let out = Tensor::new(shape, acc)?;
        Ok(self.apply(&vars, out, LinComb { coeffs }))
    }

    /// Concatenate along the channel axis, `a` first.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.batch() != tb.batch() || ta.spatial() != tb.spatial() {
            return shape_err("concat_channels", format!("{:?} vs {:?}", ta.shape(), tb.shape()));
        }
        let s = ta.spatial_len();
        let (ca, cb) = (ta.channels(), tb.channels());
        let mut data = Vec::with_capacity(ta.numel() + tb.numel());
        for n in 0..ta.batch() {
            data.extend_from_slice(&ta.data()[n * ca * s..(n + 1) * ca * s]);
            data.extend_from_slice(&tb.data()[n * cb * s..(n + 1) * cb * s]);
        }
        let mut shape = ta.shape();
        shape[1] = ca + cb;
        let out = Tensor::new(shape, data)?;
        Ok(self.apply(&[a, b], out, ConcatChannels { split: ca }))
    }

    /// Scalar `Σ w_i · x_i` for constant weights of the same length.
    pub fn weighted_sum(&mut self, x: Var, weights: &[T]) -> Result<Var> {
        let t = self.value(x);
        if t.numel() != weights.len() {
            return shape_err("weighted_sum", format!("{} weights for {} values", weights.len(), t.numel()));
        }
        let s = t.data().iter().zip(weights).fold(T::zero(), |acc, (&a, &w)| acc + a * w);
        Ok(self.apply(
            &[x],
            Tensor::scalar(s),
            WeightedSum {
                weights: weights.to_vec(),
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_tensor(v: &[f64]) -> Tensor<f64> {
        Tensor::new([1, 1, v.len(), 1, 1], v.to_vec()).unwrap()
    }

    #[test]
    fn relu_and_sigmoid_values() {
        let mut g = Graph::new();
        let x = g.constant(vec_tensor(&[-1.0, 0.0, 2.0]));
        let r = g.relu(x);
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
        let z = g.constant(vec_tensor(&[0.0]));
        let s = g.sigmoid(z);
        assert_eq!(g.value(s).data(), &[0.5]);
    }

    #[test]
    fn concat_order() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::full([1, 2, 1, 1, 1], 1.0));
        let b = g.constant(Tensor::full([1, 3, 1, 1, 1], 2.0));
        let c = g.concat_channels(a, b).unwrap();
        assert_eq!(g.value(c).shape(), [1, 5, 1, 1, 1]);
        assert_eq!(g.value(c).data(), &[1.0, 1.0, 2.0, 2.0, 2.0]);
        let bad = g.constant(Tensor::full([1, 1, 2, 1, 1], 0.0));
        assert!(g.concat_channels(a, bad).is_err());
    }

    #[test]
    fn lincomb_identities_are_exact() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(Tensor::scalar(0.123_456_7));
        let b = g.constant(Tensor::scalar(9.876_543));
        let only_a = g.lincomb(&[(a, 1.0), (b, 0.0)]).unwrap();
        let only_b = g.lincomb(&[(a, 0.0), (b, 1.0)]).unwrap();
        assert_eq!(g.value(only_a).item().to_bits(), 0.123_456_7f32.to_bits());
        assert_eq!(g.value(only_b).item().to_bits(), 9.876_543f32.to_bits());
    }
}
