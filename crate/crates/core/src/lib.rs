//! Lightweight GAN motion deblurring with a Ghost bottleneck backbone.
//!
//! Modules follow the pipeline: [`blocks`] and [`generator`] define the
//! network, [`adversarial`] the discriminators and losses, [`blursynth`] the
//! synthetic training data, [`training`] the optimization loop and
//! [`evaluation`] the quality, cost and detection measurements.

pub mod adversarial;
pub mod blocks;
pub mod blursynth;
pub mod checkpoint;
pub mod error;
pub mod evaluation;
pub mod generator;
pub mod image;
pub mod training;

pub use error::{Error, Result};
pub use generator::{Generator, GeneratorConfig};
pub use image::{ImageTensor, ValueRange};
