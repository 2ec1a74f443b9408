//! Dense f64 tensors, a reverse-mode tape, Adam, gradient checking, and
//! bit-exact checkpoints. Everything downstream records its forward passes on
//! [`Tape`] so one backward sweep serves the whole model.

pub mod checkpoint;
pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod tape;

pub use gradcheck::grad_check;
pub use optim::{Adam, AdamConfig, GradMap};
pub use params::{init_identity_matrix, init_matrix, init_vector, Param, ParamSet};
pub use tape::{bce_loss, cross_entropy_loss, Gradients, NodeId, Shape, Tape, Tensor};
