//! Dense tensors, reverse-mode differentiation, optimizer and seeded RNG.

pub mod autodiff;
pub mod ops;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use autodiff::{Gradients, Tape, Var};
pub use optim::{Moments, OptimizerState, Parameter};
pub use rng::SeisRng;
pub use tensor::{Real, Tensor};
