//! Dense tensors, a tape-based reverse-mode autodiff engine, Adam, and the
//! parameter checkpoint format.
//!
//! Everything is generic over [`Real`] so the same model code runs in `f32`
//! for training and `f64` for gradient checking.

mod adam;
pub mod checkpoint;
mod real;
mod tape;
mod tensor;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use real::Real;
pub use tape::{Gradients, Tape, Var, CLAMP_MIN_PROB, LAYER_NORM_EPS};
pub use tensor::{Param, Parameterized, Tensor};
