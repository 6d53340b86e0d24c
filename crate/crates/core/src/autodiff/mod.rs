//! Reverse-mode differentiation over dense `f64` matrices, the Adam
//! optimizer, and a central-difference gradient oracle.

mod finite_diff;
mod optim;
mod tape;
mod tensor;

pub use finite_diff::{finite_diff, max_relative_error};
pub use optim::{adam_step, lr_schedule, AdamConfig, AdamState};
pub use tape::{GradMap, Tape, Var};
pub use tensor::Tensor;

#[allow(unused_imports)]
pub(crate) use tape::{sigmoid, softplus};
