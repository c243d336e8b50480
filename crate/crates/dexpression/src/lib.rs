//! A self-contained CNN engine for facial expression recognition: tensors,
//! layer forward/backward passes, the dual-feature-extractor network graph,
//! SGD training with cross-validation, and representative-frame extraction
//! for video-derived datasets.

pub mod dataset;
pub mod error;
pub mod frameselect;
pub mod layers;
pub mod network;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Scalar, Shape, Tensor};
