//! Unsupervised video summarization with a convolutional attentive
//! generator and an LSTM discriminator trained adversarially.
//!
//! The pipeline runs: per-frame features → [`generator`] importance scores →
//! [`postprocess`] key-shot selection → [`evaluation`] against reference
//! summaries. [`training`] holds the losses and the adversarial loop.

pub mod data_io;
pub mod discriminator;
pub mod error;
pub mod evaluation;
pub mod generator;
pub mod postprocess;
pub mod tensor;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
