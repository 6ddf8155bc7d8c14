//! Dense tensors, a differentiation tape, and the primitive ops the model is built from.

pub mod gradcheck;
mod kernels;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use gradcheck::{grad_check, grad_check_many};
pub use rng::RngStream;
pub use tape::{sigmoid, Gradients, Tape, Var};
pub use tensor::Tensor;
