//! Minimal CPU tensor engine for convolutional recurrent models.
//!
//! Models are written once against [`Backend`] and run either eagerly
//! ([`Eager`]) or on a recording [`Tape`] for reverse-mode gradients.

mod backend;
mod float;
pub mod kernels;
mod tape;
mod tensor;

pub use backend::{Backend, Eager, ParamId};
pub use float::Float;
pub use tape::{Grads, NodeId, Tape};
pub use tensor::{Tensor, TensorError};
