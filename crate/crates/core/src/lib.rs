//! Streaming self-supervised learning with contrast-scored buffer
//! selection.
//!
//! A small fixed-capacity buffer doubles as the training mini-batch for
//! a contrastive encoder fed by a temporally correlated, unlabeled
//! stream. Each iteration, incoming samples compete with the buffer
//! residents: under the contrast policy the candidates with the highest
//! dissimilarity between a sample and its deterministic flipped view
//! survive. Representation quality is measured by a linear probe trained
//! on a fraction of labels over the frozen encoder.
//!
//! The numeric core is generic over the scalar type; the pipeline runs
//! on the `f64` aliases exported below.

mod binio;
pub mod error;
pub mod scalar;
pub mod seeding;

pub mod augment;
pub mod gradcheck;
pub mod harness;
pub mod model;
pub mod numcore;
pub mod objective;
pub mod scoring;
pub mod selection;
pub mod stream;

pub use error::{Error, Result};

/// Dense tensor over f64, the pipeline's numeric currency.
pub type Tensor = numcore::TensorBase<f64>;
/// f32 variant of the tensor core.
pub type Tensor32 = numcore::TensorBase<f32>;
/// Autodiff tape over f64.
pub type Tape = numcore::Tape<f64>;
