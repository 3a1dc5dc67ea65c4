//! Reverse-mode automatic differentiation over `(batch, channel, x, y, z)`
//! tensors, with the layers a 3D U-Net needs: convolution, max pooling,
//! nearest upsampling, batch normalisation and pointwise activations.
//!
//! A [`Graph`] records operations as they run; [`Graph::backward`] then
//! walks the tape in reverse. Element type is generic over [`Real`], so the
//! same code trains in `f32` and is gradient-checked in `f64`.

pub mod checkpoint;
pub mod error;
pub mod graph;
#[cfg(any(test, feature = "testing"))]
pub mod gradcheck;
pub mod ops;
pub mod optim;
pub mod real;
pub mod tensor;

pub use error::{Result, TensorError};
pub use graph::{Function, Graph, Var};
pub use ops::{BnState, Mode, Padding};
pub use optim::{adam_step, AdamState};
pub use real::Real;
pub use tensor::{Shape, Tensor};
