//! WAV ingest and export. Reading mixes to mono and resamples to 16 kHz;
//! writing emits 16-bit PCM mono at 16 kHz.

use std::path::Path;

use crate::audio::AudioBuffer;
use crate::dsp::resample_to_16k;
use crate::error::{Error, Result};
use crate::SAMPLE_RATE;

/// Read a WAV file of any common format (integer or float, any channel
/// count, any rate) into a mono 16 kHz buffer.
pub fn read_wav(path: &Path) -> Result<AudioBuffer> {
    let reader = hound::WavReader::open(path)
        .map_err(|e| Error::Wav { path: path.into(), message: e.to_string() })?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::Wav { path: path.into(), message: "zero channels".into() });
    }
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .into_samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Wav { path: path.into(), message: e.to_string() })?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1i64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Wav { path: path.into(), message: e.to_string() })?
        }
    };
    let frames = interleaved.len() / channels;
    let mut mono = Vec::with_capacity(frames);
    for f in 0..frames {
        let sum: f32 = interleaved[f * channels..(f + 1) * channels].iter().sum();
        mono.push(sum / channels as f32);
    }
    let buffer = AudioBuffer::new(mono, spec.sample_rate as f64)?;
    Ok(resample_to_16k(&buffer))
}

/// Write samples as 16-bit PCM mono at 16 kHz, clamping to [-1, 1].
pub fn write_wav(path: &Path, samples: &[f32]) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE as u32,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)
        .map_err(|e| Error::Wav { path: path.into(), message: e.to_string() })?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16;
        writer
            .write_sample(v)
            .map_err(|e| Error::Wav { path: path.into(), message: e.to_string() })?;
    }
    writer.finalize().map_err(|e| Error::Wav { path: path.into(), message: e.to_string() })
}
