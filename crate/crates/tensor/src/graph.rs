//! Tape-based computation graph.
//!
//! Nodes are appended in evaluation order, so a node's inputs always have
//! smaller indices and reverse index order is a valid topological order for
//! backpropagation.

use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of a differentiable operation.
pub trait Function<T: Real> {
    fn name(&self) -> &'static str;

    /// Gradients with respect to each input, given the gradient of the
    /// output. Entries for inputs with `needs_grad[i] == false` may be `None`.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_output: &[T],
        needs_grad: &[bool],
    ) -> Vec<Option<Vec<T>>>;
}

struct Node<T: Real> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    inputs: Vec<Var>,
    function: Option<Box<dyn Function<T>>>,
}

pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            inputs: Vec::new(),
            function: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Record the result of an operation on `inputs`.
    pub fn apply(&mut self, inputs: &[Var], value: Tensor<T>, function: impl Function<T> + 'static) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            inputs: inputs.to_vec(),
            function: requires_grad.then(|| Box::new(function) as Box<dyn Function<T>>),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    pub fn grad(&self, var: Var) -> Option<&[T]> {
        self.nodes[var.0].grad.as_deref()
    }

    pub fn take_grad(&mut self, var: Var) -> Option<Vec<T>> {
        self.nodes[var.0].grad.take()
    }

    /// Reset all gradients.
    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Backpropagate from a one-element loss. Gradients accumulate into every
    /// node that requires them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.nodes[loss.0].value.shape();
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(TensorError::NotScalar(shape));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        accumulate(&mut self.nodes[loss.0].grad, &[T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(grad_out) = self.nodes[idx].grad.take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let Some(function) = node.function.as_ref() else {
                self.nodes[idx].grad = Some(grad_out);
                continue;
            };
            let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let needs: Vec<bool> = node.inputs.iter().map(|v| self.nodes[v.0].requires_grad).collect();
            let grads = function.backward(&inputs, &node.value, &grad_out, &needs);
            let targets = node.inputs.clone();
            for ((target, grad), need) in targets.into_iter().zip(grads).zip(needs) {
                if let (Some(g), true) = (grad, need) {
                    debug_assert_eq!(g.len(), self.nodes[target.0].value.numel());
                    accumulate(&mut self.nodes[target.0].grad, &g);
                }
            }
            self.nodes[idx].grad = Some(grad_out);
        }
        Ok(())
    }
}

fn accumulate<T: Real>(slot: &mut Option<Vec<T>>, g: &[T]) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
        None => *slot = Some(g.to_vec()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaled_scalar() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.scale(x, 2.0);
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0]);
    }

    #[test]
    fn reuse_accumulates() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.add(x, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.value(y).item(), 6.0);
        assert_eq!(g.grad(x).unwrap(), &[2.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::<f32>::new();
        let x = g.param(Tensor::zeros([1, 1, 2, 1, 1]));
        assert!(matches!(g.backward(x), Err(TensorError::NotScalar(_))));
    }

    #[test]
    fn constants_get_no_grad() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::scalar(1.0));
        let c = g.constant(Tensor::scalar(5.0));
        let y = g.add(x, c).unwrap();
        g.backward(y).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(x).unwrap(), &[1.0]);
    }
}
