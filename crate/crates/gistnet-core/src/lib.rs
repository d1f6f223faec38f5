//! Dual-stream convolutional network engine: a high-resolution object stream
//! ("fovea") and a low-resolution whole-scene stream ("periphery") fused by
//! concatenation before classification, plus everything needed to train and
//! analyse such models on CPU:
//!
//! - dense tensors with deterministic seeded randomness ([`tensor`], [`rng`])
//! - forward/backward passes for every layer type, no autodiff tape ([`layers`])
//! - Adam and a finite-difference gradient checker ([`optim`])
//! - declarative model builders and parameter accounting ([`model`])
//! - dataset ingestion, context transforms, and a synthetic generator ([`data`])
//! - top-k metrics, confidence intervals, blur/ratio curves, saliency,
//!   exact t-SNE and linear probes ([`eval`], [`tsne`], [`saliency`], [`probe`])

pub mod data;
pub mod eval;
pub mod layers;
pub mod model;
pub mod optim;
pub mod probe;
pub mod rng;
pub mod saliency;
pub mod tensor;
pub mod train;
pub mod tsne;

mod error;

pub use error::{Error, Result};
