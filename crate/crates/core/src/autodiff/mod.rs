//! Dense tensors with a reverse-mode tape, optimizers and a central-difference
//! gradient oracle.

mod gradcheck;
mod graph;
mod optim;
mod tensor;

pub use graph::{sigmoid, Gradients, Graph, Var};

pub use gradcheck::{finite_difference_check, relative_error};
pub use optim::{clip_grad_norm, grad_norm, sgd_step, AdamConfig, AdamState};
pub use tensor::{Precision, Tensor, MAX_RANK};
