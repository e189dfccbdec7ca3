//! Tensor arithmetic with reverse-mode automatic differentiation.

mod kernels;
mod optim;
mod tape;

pub use optim::{adam_step, AdamConfig, AdamState};
pub use tape::{Gradients, Tape, Var};
