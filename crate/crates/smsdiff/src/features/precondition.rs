//! Transfer-time feature adjustment: octave shift, autotune, loudness
//! moment matching, loudness shift, and confidence-loudness masking,
//! applied strictly in that order.
//!
//! Every stage that is switched off is skipped entirely, so the identity
//! configuration returns bit-identical features.

use crate::audio::FrameSeries;
use crate::dsp::loudness::LOUDNESS_FLOOR_DB;
use crate::error::{Error, Result};

use super::stats::{hz_to_midi, DatasetStats};
use super::ConditioningFeatures;

/// Near-grid pitches (within a millionth of a semitone) are left untouched
/// by autotune, which makes it exactly idempotent at full strength.
const AUTOTUNE_SNAP_MIDI: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreconditionOptions {
    /// Match loudness mean/std to the dataset statistics.
    pub use_statistics: bool,
    /// Frames scoring below `mask_threshold` times the median score are
    /// quieted; 0 disables masking.
    pub mask_threshold: f64,
    /// Attenuation in dB applied to masked frames.
    pub quiet: f64,
    /// Blend toward the nearest semitone, 0 (off) to 1 (full snap).
    pub autotune: f64,
    /// Whole-octave pitch shift (doubles or halves f0 per step).
    pub octave_shift: i32,
    /// Flat loudness offset in dB.
    pub loudness_shift: f64,
}

impl Default for PreconditionOptions {
    /// The identity chain: every stage disabled.
    fn default() -> Self {
        PreconditionOptions {
            use_statistics: false,
            mask_threshold: 0.0,
            quiet: 0.0,
            autotune: 0.0,
            octave_shift: 0,
            loudness_shift: 0.0,
        }
    }
}

/// Score used by masking: confidence times loudness rescaled from
/// [-120, 0] dB onto [0, 1].
fn mask_score(confidence: f32, loudness_db: f32) -> f64 {
    confidence as f64 * (loudness_db as f64 + 120.0) / 120.0
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn precondition(
    f: &ConditioningFeatures,
    opts: &PreconditionOptions,
    stats: Option<&DatasetStats>,
) -> Result<ConditioningFeatures> {
    if opts.use_statistics && stats.is_none() {
        return Err(Error::InvalidArgument(
            "statistics adjustment requested without dataset stats".into(),
        ));
    }
    let autotune = opts.autotune.clamp(0.0, 1.0);
    let quiet = opts.quiet.max(0.0);
    let mut f0: Vec<f32> = f.f0_hz.values().to_vec();
    let conf = f.f0_confidence.values();
    let mut loud: Vec<f32> = f.loudness_db.values().to_vec();

    // 1. Octave shift: multiplication by a power of two, exact in binary.
    if opts.octave_shift != 0 {
        let factor = 2.0f32.powi(opts.octave_shift);
        for hz in f0.iter_mut() {
            *hz *= factor;
        }
    }

    // 2. Autotune: blend each voiced pitch toward the nearest semitone.
    if autotune > 0.0 {
        for hz in f0.iter_mut() {
            if *hz <= 0.0 {
                continue;
            }
            let p = hz_to_midi(*hz as f64);
            let dev = p.round() - p;
            if dev.abs() > AUTOTUNE_SNAP_MIDI {
                *hz = (*hz as f64 * (autotune * dev / 12.0).exp2()) as f32;
            }
        }
    }

    // 3. Loudness moment matching against the dataset.
    if opts.use_statistics {
        let stats = stats.unwrap();
        let src: Vec<f64> = loud
            .iter()
            .filter(|&&db| db as f64 > LOUDNESS_FLOOR_DB as f64 + 1.0)
            .map(|&db| db as f64)
            .collect();
        if !src.is_empty() {
            let mean = src.iter().sum::<f64>() / src.len() as f64;
            let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / src.len() as f64;
            let sd = var.sqrt().max(1e-3);
            for db in loud.iter_mut() {
                *db = ((*db as f64 - mean) / sd * stats.std_loudness_db + stats.mean_loudness_db)
                    as f32;
            }
        }
    }

    // 4. Flat loudness shift.
    if opts.loudness_shift != 0.0 {
        for db in loud.iter_mut() {
            *db = (*db as f64 + opts.loudness_shift) as f32;
        }
    }

    // 5. Masking: quiet the frames that score badly on confidence*loudness.
    if opts.mask_threshold > 0.0 && !loud.is_empty() {
        let scores: Vec<f64> =
            (0..loud.len()).map(|t| mask_score(conf[t], loud[t])).collect();
        let med = median(scores.clone());
        for t in 0..loud.len() {
            if scores[t] < opts.mask_threshold * med {
                loud[t] = (loud[t] as f64 - quiet) as f32;
            }
        }
    }

    Ok(ConditioningFeatures {
        f0_hz: FrameSeries::scalar_series(f0, f.f0_hz.frame_rate),
        f0_confidence: f.f0_confidence.clone(),
        loudness_db: FrameSeries::scalar_series(loud, f.loudness_db.frame_rate),
        mfcc: f.mfcc.clone(),
    })
}
