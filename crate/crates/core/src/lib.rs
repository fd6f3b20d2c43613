//! Holistic multi-modal memory network for five-choice question answering
//! over subtitle sentences and video frames.
//!
//! The crate is layered bottom-up:
//!
//! - [`numerics`]: column-major matrices, stable softmax, seeded RNG.
//! - [`encodings`]: word vectors, the two learnable projections and the
//!   sentence/frame encoders.
//! - [`attention`]: parameter-free attention primitives.
//! - [`hmmn`]: the answer-aware cell, hop stacking and affinity scoring,
//!   plus the single-memory baseline.
//! - [`ablation`]: the 40 baseline memory representations.
//! - [`model`]: variant selection shared by training and evaluation.
//! - [`gradients`]: hand-derived reverse mode and a finite-difference check.
//! - [`data`]: dataset files, splits and the synthetic task generator.
//! - [`training`]: minibatch SGD with early stopping and evaluation.
//!
//! All arithmetic is `f64`.

pub mod ablation;
pub mod attention;
pub mod data;
pub mod encodings;
pub mod error;
pub mod gradients;
pub mod hmmn;
pub mod model;
pub mod numerics;
pub mod training;

pub use ablation::{enumerate_specs, RepresentationSpec};
pub use data::{Dataset, SyntheticConfig};
pub use encodings::{
    Dims, EncodedInstance, ModelParams, PreparedInstance, RawInstance, Vocabulary,
};
pub use error::{Error, Result};
pub use hmmn::{AttentionTrace, Prediction};
pub use model::Variant;
pub use numerics::Mat;
pub use training::{Metrics, TrainConfig};
