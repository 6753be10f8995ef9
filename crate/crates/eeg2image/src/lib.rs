//! EEG-conditioned image synthesis at desk scale.
//!
//! The pipeline has three trained stages plus evaluation:
//!
//! 1. [`cformer`] — a convolution + self-attention EEG encoder trained for
//!    10-class classification of 14x32 EEG windows, then truncated so its
//!    100-unit penultimate layer provides EEG encodings.
//! 2. [`classifier`] — a small CNN image classifier trained on real images
//!    and frozen; it supplies class probabilities and perceptual features.
//! 3. [`cgan`] — a conditional GAN whose generator is driven *only* by EEG
//!    encodings (no extra noise input), trained with adversarial,
//!    classification and perceptual losses.
//! 4. [`metrics`] — inception score and class diversity score over the
//!    frozen classifier's predictions.
//!
//! Everything runs on the in-crate [`tensor`] autodiff engine with 64-bit
//! floats, explicit seeds, and bit-reproducible results. See the crate
//! examples for runnable entry points into each capability.

pub mod check;
pub mod checkpoint;
pub mod cformer;
pub mod cgan;
pub mod classifier;
pub mod cli;
pub mod config;
pub mod dataio;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
