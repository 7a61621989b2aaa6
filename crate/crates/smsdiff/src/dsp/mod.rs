//! Non-learned DSP primitives: FFT plumbing, STFT, mel/MFCC, A-weighted
//! loudness, resampling, and frame-rate smoothing.

pub mod fft;
pub mod loudness;
pub mod mel;
pub mod resample;
pub mod stft;
pub mod window;

pub use loudness::a_weighted_loudness;
pub use mel::mfcc;
pub use resample::{resample_to_16k, smooth_upsample_hamming, upsample_bilinear};
pub use stft::stft;
