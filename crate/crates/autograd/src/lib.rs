//! A small reverse-mode automatic differentiation engine for NCHW image
//! networks on the CPU.
//!
//! Execution is single-threaded and deterministic: identical inputs and
//! parameters give bit-identical outputs and gradients.

mod array;
pub mod counter;
pub mod gradcheck;
pub mod ops;
mod optim;
mod params;
mod scalar;
mod tensor;

pub use array::Array;
pub use optim::{Adam, AdamConfig, AdamState};
pub use params::{Ctx, Entry, EntryKind, Init, ParamBuilder, ParamId, ParamStore, StoreError};
pub use scalar::Float;
pub use tensor::{Gradients, Tensor};
