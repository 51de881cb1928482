//! Core of the neurochair BCI pipeline.
//!
//! Frames come from [`synth`] (or a replayed recording), are reduced to
//! log band-power features by [`dsp`], classified into mental commands by
//! [`classifier`], gated into drive commands by [`decoder`], and executed
//! by the wheelchair digital twin in [`sim`].
//!
//! Batch-heavy paths (feature extraction over many epochs, forest training,
//! cross-validation folds) run on rayon when the `parallel` feature is on
//! and fall back to plain iterators otherwise.

pub mod classifier;
pub mod decoder;
pub mod dsp;
pub mod error;
pub mod par;
pub mod signal;
pub mod sim;
pub mod synth;

pub use error::{Error, Result};
