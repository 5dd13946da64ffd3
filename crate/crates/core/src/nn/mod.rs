//! Differentiable-computation substrate: parameter tensors, MLP and GRU
//! layers, a reverse-mode tape, Adam, and a finite-difference oracle.

pub mod adam;
pub mod gradcheck;
pub mod layers;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{finite_diff_grad, max_relative_error};
pub use layers::{gru_step, mlp_forward, Activation, Gru, GruSpec, Mlp, MlpSpec};
pub use tape::{Grads, Tape, Var};
pub use tensor::{Checkpoint, ParamSet, ParamTensor};
