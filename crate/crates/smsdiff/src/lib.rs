//! Differentiable spectral modeling synthesis.
//!
//! The crate decomposes a monophonic voice recording into frame-rate control
//! signals (fundamental frequency, A-weighted loudness, optionally MFCCs),
//! feeds them through a small recurrent decoder, and resynthesizes audio with
//! a harmonic oscillator bank plus filtered noise and a trainable room
//! response. Every synthesis stage is expressed on a reverse-mode autodiff
//! tape so the decoder and reverb can be trained end to end against a
//! multi-scale spectral reconstruction loss.

pub mod audio;
pub mod autodiff;
pub mod config;
pub mod dsp;
pub mod error;
pub mod features;
pub mod model;
pub mod synth;
pub mod trainer;
pub mod verify;
pub mod wav;

pub use error::{Error, Result};

/// Global sample rate. All audio entering the toolkit is resampled to this.
pub const SAMPLE_RATE: f64 = 16_000.0;

/// Frame rate of the control signals (f0, loudness, decoder outputs).
pub const CONTROL_RATE: f64 = 250.0;

/// Hop between control frames in samples: 16000 / 250.
pub const CONTROL_HOP: usize = 64;
