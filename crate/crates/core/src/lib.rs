//! Toolkit for building hybrid spoofed-speech corpora and training a
//! spectrogram-transformer classifier on them.
//!
//! The pipeline runs in five stages, each backed by one module:
//!
//! 1. [`audio`] — canonical 16 kHz mono PCM, WAV I/O, resampling.
//! 2. [`compose`] / [`degrade`] — splice human and synthetic segments into
//!    hybrid utterances, then add noise / filtering / codec artifacts.
//! 3. [`features`] — 128-bin log-Mel spectrograms.
//! 4. [`model`] / [`train`] — a from-scratch audio spectrogram transformer
//!    with full backpropagation, plus the Adam/cosine fine-tuning loop.
//! 5. [`eval`] — reliability thresholding, accuracy, P/R/F1, EER, and
//!    per-group reliability statistics.
//!
//! [`manifest`] defines the line-delimited metadata format that ties the
//! stages together, and [`synth`] generates a procedural toy corpus for
//! demos and end-to-end tests.

pub mod audio;
pub mod compose;
pub mod degrade;
pub mod eval;
pub mod features;
pub mod manifest;
pub mod model;
pub mod parallel;
pub mod rng;
pub mod synth;
pub mod train;
pub mod weights;

pub use audio::AudioClip;
pub use eval::EvalReport;
pub use features::Spectrogram;
pub use manifest::{ClassLabel, Group, UtteranceRecord};
pub use model::{ModelConfig, ModelParams};
pub use train::TrainConfig;
