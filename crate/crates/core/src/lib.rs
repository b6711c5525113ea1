//! Single-image super-resolution with deep projection networks.
//!
//! The crate covers a small CPU tensor engine, the projection-skip network
//! and its ablation variants, the bicubic/metric protocol layer, patch and
//! internal-example extraction, SGD training, per-image model adaptation
//! (finetuning, external augmentation, model selection) and inference-time
//! refinements (back-projection, enhanced prediction, cascading).

pub mod adaptation;
pub mod conv;
pub mod data;
pub mod error;
pub mod experiments;
pub mod imaging;
pub mod kv;
pub mod model;
pub mod ops;
pub mod optim;
pub mod pipeline;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Dims, Real, Tensor4};
