//! Frame-rate conditioning features extracted from audio.

pub mod pitch;
pub mod precondition;
pub mod sidecar;
pub mod stats;

use std::path::Path;

use crate::audio::{AudioBuffer, FrameSeries};
use crate::dsp::loudness::a_weighted_loudness;
use crate::dsp::mel::mfcc;
use crate::error::Result;

pub use pitch::track_f0;
pub use precondition::{precondition, PreconditionOptions};
pub use sidecar::{read_sidecar, sidecar_path, write_sidecar};
pub use stats::{compute_dataset_stats, DatasetStats};

/// The control signals that condition the decoder, all at the control frame
/// rate. `f0_hz` / `f0_confidence` / `loudness_db` share one frame count;
/// `mfcc` runs at half that rate when present.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningFeatures {
    pub f0_hz: FrameSeries,
    pub f0_confidence: FrameSeries,
    pub loudness_db: FrameSeries,
    pub mfcc: Option<FrameSeries>,
}

impl ConditioningFeatures {
    pub fn num_frames(&self) -> usize {
        self.f0_hz.num_frames()
    }
}

/// Extract all conditioning features from an audio buffer. The pitch and
/// loudness trackers frame the signal independently, so their series are
/// truncated to the common frame count.
pub fn extract_features(audio: &AudioBuffer, with_mfcc: bool) -> Result<ConditioningFeatures> {
    let (mut f0_hz, mut f0_confidence) = track_f0(audio);
    let mut loudness_db = a_weighted_loudness(audio)?;
    let frames = f0_hz.num_frames().min(loudness_db.num_frames());
    f0_hz.truncate(frames);
    f0_confidence.truncate(frames);
    loudness_db.truncate(frames);
    let mfcc = if with_mfcc { Some(mfcc(audio)?) } else { None };
    Ok(ConditioningFeatures { f0_hz, f0_confidence, loudness_db, mfcc })
}

/// Extract features for an audio file, honoring a sidecar feature file if one
/// sits next to it: the sidecar's f0, confidence, and loudness replace the
/// tracker outputs, while MFCCs (when requested) still come from the audio.
pub fn extract_features_for_file(
    path: &Path,
    audio: &AudioBuffer,
    with_mfcc: bool,
) -> Result<ConditioningFeatures> {
    let sidecar = sidecar_path(path);
    if sidecar.is_file() {
        let (f0_hz, f0_confidence, loudness_db) = read_sidecar(&sidecar)?;
        let mfcc = if with_mfcc { Some(mfcc(audio)?) } else { None };
        return Ok(ConditioningFeatures { f0_hz, f0_confidence, loudness_db, mfcc });
    }
    extract_features(audio, with_mfcc)
}
