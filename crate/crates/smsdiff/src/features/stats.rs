//! Corpus-level pitch and loudness statistics.
//!
//! Sums run over sorted copies of the collected values so the result is
//! bit-identical no matter how the input list is ordered.

use crate::dsp::loudness::LOUDNESS_FLOOR_DB;
use crate::error::{Error, Result};

use super::ConditioningFeatures;

/// Frames need at least this confidence to count toward the pitch mean.
pub const STATS_CONFIDENCE: f32 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetStats {
    pub mean_midi_pitch: f64,
    pub mean_loudness_db: f64,
    pub std_loudness_db: f64,
}

/// 69 + 12*log2(f/440); nonpositive frequencies map to 0.
pub fn hz_to_midi(hz: f64) -> f64 {
    if hz <= 0.0 {
        return 0.0;
    }
    69.0 + 12.0 * (hz / 440.0).log2()
}

pub fn midi_to_hz(midi: f64) -> f64 {
    440.0 * ((midi - 69.0) / 12.0).exp2()
}

fn sorted_sum(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

/// Mean MIDI pitch over confident frames and loudness moments over frames
/// above the silence floor, pooled across the whole corpus.
pub fn compute_dataset_stats(features: &[ConditioningFeatures]) -> Result<DatasetStats> {
    let mut midi = Vec::new();
    let mut loud = Vec::new();
    for f in features {
        for (t, &hz) in f.f0_hz.values().iter().enumerate() {
            if f.f0_confidence.values()[t] > STATS_CONFIDENCE && hz > 0.0 {
                midi.push(hz_to_midi(hz as f64));
            }
        }
        for &db in f.loudness_db.values() {
            if db as f64 > LOUDNESS_FLOOR_DB as f64 + 1.0 {
                loud.push(db as f64);
            }
        }
    }
    if midi.is_empty() {
        return Err(Error::Dataset("no voiced frames with confidence > 0.8".into()));
    }
    if loud.is_empty() {
        return Err(Error::Dataset("no loudness frames above the silence floor".into()));
    }
    let mean_midi = sorted_sum(midi.clone()) / midi.len() as f64;
    let n = loud.len() as f64;
    let mean_loud = sorted_sum(loud.clone()) / n;
    let var = sorted_sum(loud.iter().map(|&v| (v - mean_loud) * (v - mean_loud)).collect()) / n;
    Ok(DatasetStats {
        mean_midi_pitch: mean_midi,
        mean_loudness_db: mean_loud,
        std_loudness_db: var.sqrt(),
    })
}
