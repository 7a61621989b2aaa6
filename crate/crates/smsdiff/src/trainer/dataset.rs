//! Dataset ingestion: scan a directory of WAV files, cut each into
//! fixed-length examples on a one-second hop, and extract conditioning
//! features per chunk. A file that is exactly one example long keeps its
//! sidecar features (the prepared-directory layout); longer files are
//! re-tracked per chunk.

use std::path::{Path, PathBuf};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::features::{
    compute_dataset_stats, extract_features, extract_features_for_file, ConditioningFeatures,
    DatasetStats,
};
use crate::wav::read_wav;
use crate::SAMPLE_RATE;

/// Hop between successive example windows, in seconds.
pub const CHUNK_HOP_SECONDS: f64 = 1.0;

#[derive(Debug, Clone)]
pub struct DatasetItem {
    pub source: PathBuf,
    pub chunk_index: usize,
    /// Exactly `example_seconds` of 16 kHz mono audio.
    pub samples: Vec<f32>,
    pub features: ConditioningFeatures,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub items: Vec<DatasetItem>,
    pub stats: DatasetStats,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

fn wav_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.extension().and_then(|x| x.to_str()).is_some_and(|x| x.eq_ignore_ascii_case("wav"))
        })
        .collect();
    paths.sort();
    Ok(paths)
}

/// Load every WAV under `dir` and window it into `example_seconds` chunks.
pub fn make_dataset(dir: &Path, example_seconds: f64, with_mfcc: bool) -> Result<Dataset> {
    if !(example_seconds > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "example_seconds must be positive, got {example_seconds}"
        )));
    }
    let example_len = (example_seconds * SAMPLE_RATE).round() as usize;
    let hop = (CHUNK_HOP_SECONDS * SAMPLE_RATE) as usize;
    let paths = wav_paths(dir)?;
    if paths.is_empty() {
        return Err(Error::Dataset(format!("no .wav files in {}", dir.display())));
    }
    let mut items = Vec::new();
    let mut features_pool = Vec::new();
    for path in &paths {
        let audio = read_wav(path)?;
        let n = audio.samples.len();
        if n < example_len {
            eprintln!(
                "warning: {} is {:.2} s, shorter than one {example_seconds} s example; skipped",
                path.display(),
                n as f64 / SAMPLE_RATE
            );
            continue;
        }
        let chunks = (n - example_len) / hop + 1;
        for c in 0..chunks {
            let samples = audio.samples[c * hop..c * hop + example_len].to_vec();
            let chunk_audio = AudioBuffer::new(samples.clone(), SAMPLE_RATE)?;
            let features = if chunks == 1 {
                extract_features_for_file(path, &chunk_audio, with_mfcc)?
            } else {
                extract_features(&chunk_audio, with_mfcc)?
            };
            features_pool.push(features.clone());
            items.push(DatasetItem { source: path.clone(), chunk_index: c, samples, features });
        }
    }
    if items.is_empty() {
        return Err(Error::Dataset(format!(
            "no file in {} is long enough for a {example_seconds} s example",
            dir.display()
        )));
    }
    let stats = compute_dataset_stats(&features_pool)?;
    Ok(Dataset { items, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::stats::hz_to_midi;
    use crate::features::{sidecar_path, write_sidecar};
    use crate::wav::write_wav;
    use crate::CONTROL_RATE;

    fn tone(seconds: f64, hz: f64) -> Vec<f32> {
        let n = (seconds * SAMPLE_RATE) as usize;
        (0..n)
            .map(|i| {
                let t = i as f64 / SAMPLE_RATE;
                (0.4 * (2.0 * std::f64::consts::PI * hz * t).sin()) as f32
            })
            .collect()
    }

    #[test]
    fn ten_second_file_with_four_second_examples_gives_seven_chunks() {
        let dir = tempfile::tempdir().unwrap();
        write_wav(&dir.path().join("a.wav"), &tone(10.0, 220.0)).unwrap();
        let ds = make_dataset(dir.path(), 4.0, false).unwrap();
        assert_eq!(ds.len(), 7);
        for (i, item) in ds.items.iter().enumerate() {
            assert_eq!(item.chunk_index, i);
            assert_eq!(item.samples.len(), 64_000);
            assert_eq!(item.features.num_frames(), 1000);
        }
    }

    #[test]
    fn files_are_visited_in_sorted_order() {
        let dir = tempfile::tempdir().unwrap();
        write_wav(&dir.path().join("b.wav"), &tone(1.0, 220.0)).unwrap();
        write_wav(&dir.path().join("a.wav"), &tone(1.0, 330.0)).unwrap();
        let ds = make_dataset(dir.path(), 1.0, false).unwrap();
        assert_eq!(ds.len(), 2);
        assert!(ds.items[0].source.ends_with("a.wav"));
        assert!(ds.items[1].source.ends_with("b.wav"));
    }

    #[test]
    fn empty_directory_errors_naming_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let err = make_dataset(dir.path(), 1.0, false).unwrap_err();
        assert!(err.to_string().contains(dir.path().to_str().unwrap()), "{err}");
    }

    #[test]
    fn short_files_are_dropped_not_fatal() {
        let dir = tempfile::tempdir().unwrap();
        write_wav(&dir.path().join("short.wav"), &tone(0.5, 220.0)).unwrap();
        write_wav(&dir.path().join("long.wav"), &tone(2.5, 220.0)).unwrap();
        let ds = make_dataset(dir.path(), 1.0, false).unwrap();
        assert_eq!(ds.len(), 2);
        assert!(ds.items.iter().all(|i| i.source.ends_with("long.wav")));
    }

    #[test]
    fn only_short_files_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        write_wav(&dir.path().join("short.wav"), &tone(0.5, 220.0)).unwrap();
        assert!(make_dataset(dir.path(), 1.0, false).is_err());
    }

    #[test]
    fn stats_recover_the_generator_pitch() {
        let dir = tempfile::tempdir().unwrap();
        write_wav(&dir.path().join("tone.wav"), &tone(3.0, 220.0)).unwrap();
        let ds = make_dataset(dir.path(), 1.0, false).unwrap();
        assert_eq!(ds.len(), 3);
        assert!((ds.stats.mean_midi_pitch - hz_to_midi(220.0)).abs() < 0.05);
    }

    #[test]
    fn exact_length_files_honor_their_sidecars() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chunk.wav");
        write_wav(&path, &tone(1.0, 220.0)).unwrap();
        let frames = 250;
        let series = |v: f32| {
            crate::audio::FrameSeries::scalar_series(vec![v; frames], CONTROL_RATE)
        };
        let canned = ConditioningFeatures {
            f0_hz: series(330.0),
            f0_confidence: series(0.9),
            loudness_db: series(-33.0),
            mfcc: None,
        };
        write_sidecar(&sidecar_path(&path), &canned).unwrap();
        let ds = make_dataset(dir.path(), 1.0, false).unwrap();
        assert_eq!(ds.items[0].features.f0_hz.values(), vec![330.0; frames].as_slice());
        assert_eq!(ds.items[0].features.loudness_db.values(), vec![-33.0; frames].as_slice());
    }

    #[test]
    fn mfcc_flag_attaches_coefficients() {
        let dir = tempfile::tempdir().unwrap();
        write_wav(&dir.path().join("tone.wav"), &tone(1.0, 220.0)).unwrap();
        let ds = make_dataset(dir.path(), 1.0, true).unwrap();
        let mfcc = ds.items[0].features.mfcc.as_ref().unwrap();
        assert_eq!(mfcc.dim, 30);
        assert_eq!(mfcc.num_frames(), 125);
    }
}
