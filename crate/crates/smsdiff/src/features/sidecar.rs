//! Plain-text per-frame feature files stored next to audio files.
//!
//! One line per control frame: `time_s f0_hz confidence loudness_db`,
//! space-separated. Lines starting with `#` and blank lines are skipped.
//! Values are printed with shortest-round-trip formatting, so a write/read
//! cycle reproduces the series bit for bit.

use std::fs;
use std::path::{Path, PathBuf};

use crate::audio::FrameSeries;
use crate::error::{Error, Result};
use crate::CONTROL_RATE;

use super::ConditioningFeatures;

/// Where the sidecar for an audio file lives: same name, `.features.txt`.
pub fn sidecar_path(audio_path: &Path) -> PathBuf {
    audio_path.with_extension("features.txt")
}

/// Read (f0, confidence, loudness) series from a sidecar file. Confidence is
/// clamped to [0, 1] and f0 to >= 0 so hand-edited files can't break the
/// feature invariants.
pub fn read_sidecar(path: &Path) -> Result<(FrameSeries, FrameSeries, FrameSeries)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut f0 = Vec::new();
    let mut conf = Vec::new();
    let mut loud = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::Dataset(format!(
                "{}:{}: expected 4 fields (time_s f0_hz confidence loudness_db), got {}",
                path.display(),
                lineno + 1,
                fields.len()
            )));
        }
        let parse = |what: &str, s: &str| -> Result<f32> {
            s.parse::<f32>().map_err(|_| {
                Error::Dataset(format!(
                    "{}:{}: bad {what} value {s:?}",
                    path.display(),
                    lineno + 1
                ))
            })
        };
        let _time = parse("time", fields[0])?;
        f0.push(parse("f0", fields[1])?.max(0.0));
        conf.push(parse("confidence", fields[2])?.clamp(0.0, 1.0));
        loud.push(parse("loudness", fields[3])?);
    }
    if f0.is_empty() {
        return Err(Error::Dataset(format!("{}: no frames", path.display())));
    }
    Ok((
        FrameSeries::scalar_series(f0, CONTROL_RATE),
        FrameSeries::scalar_series(conf, CONTROL_RATE),
        FrameSeries::scalar_series(loud, CONTROL_RATE),
    ))
}

pub fn write_sidecar(path: &Path, features: &ConditioningFeatures) -> Result<()> {
    let mut out = String::from("# time_s f0_hz confidence loudness_db\n");
    let f0 = features.f0_hz.values();
    let conf = features.f0_confidence.values();
    let loud = features.loudness_db.values();
    for t in 0..f0.len() {
        let time = t as f64 / CONTROL_RATE;
        out.push_str(&format!("{} {} {} {}\n", time, f0[t], conf[t], loud[t]));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
