//! The full generator: backbone, cheap-module pyramid, multi-scale fusion
//! and residual output.

mod config;
mod net;
mod padding;

pub(crate) use config::diff_serialized;
pub use config::{GeneratorConfig, OutputActivation};
pub use net::{CheapStage, FuseStage, Generator};
pub use padding::{pad_to_multiple, pad_to_stride, PaddingRecord};

use ghost_autograd::{Float, ParamStore};

/// Number of trainable scalars.
pub fn count_parameters<T: Float>(store: &ParamStore<T>) -> usize {
    store.num_trainable()
}

