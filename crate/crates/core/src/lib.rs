//! Explainable rice-grain image classification built from first principles.
//!
//! The crate covers the whole pipeline: image preprocessing (Canny edges,
//! Otsu segmentation, normalization, augmentation), a small hand-written CNN
//! with backpropagation, Adamax/Adam training with early stopping, evaluation
//! metrics, and LIME / KernelSHAP explanations over superpixels.
//!
//! Data-parallel work (per-sample forward/backward, evaluation, perturbation
//! inference) goes through [`par::Execution`]. With the `parallel` feature
//! disabled every path runs sequentially and produces bit-identical results.

pub mod dataset;
pub mod error;
pub mod explain;
pub mod imaging;
pub mod metrics;
pub mod model;
pub mod par;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, ModelFileError, Result};
pub use tensor::{Real, Tensor};

/// Number of grain varieties.
pub const NUM_CLASSES: usize = 5;

/// Side length of the square network input.
pub const IMAGE_SIZE: usize = 50;

/// Channel count of the network input.
pub const IMAGE_CHANNELS: usize = 3;
