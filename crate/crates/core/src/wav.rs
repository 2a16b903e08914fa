//! RIFF WAV reading and writing (16-bit PCM and 32-bit IEEE float).

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use ndarray::Array2;
use thiserror::Error;

use crate::signal::{SignalError, WaveformSegment};

#[derive(Debug, Error)]
pub enum WavError {
    #[error("wav i/o failed for {path}: {source}")]
    Io {
        path: String,
        source: hound::Error,
    },
    #[error("unsupported wav format: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

pub fn read_wav(path: &Path) -> Result<WaveformSegment, WavError> {
    let mut reader = WavReader::open(path).map_err(|source| WavError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(|source| WavError::Io {
                path: path.display().to_string(),
                source,
            })?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<Result<_, _>>()
            .map_err(|source| WavError::Io {
                path: path.display().to_string(),
                source,
            })?,
        (fmt, bits) => {
            return Err(WavError::Unsupported(format!(
                "{fmt:?} at {bits} bits (expected 16-bit PCM or 32-bit float)"
            )))
        }
    };
    let frames = interleaved.len() / channels;
    let mut samples = Array2::zeros((channels, frames));
    for i in 0..frames {
        for c in 0..channels {
            samples[(c, i)] = interleaved[i * channels + c];
        }
    }
    Ok(WaveformSegment::new(samples, spec.sample_rate, 0.0)?)
}

pub fn write_wav_f32(path: &Path, segment: &WaveformSegment) -> Result<(), WavError> {
    let spec = WavSpec {
        channels: segment.channels() as u16,
        sample_rate: segment.sample_rate(),
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|source| WavError::Io {
        path: path.display().to_string(),
        source,
    })?;
    for i in 0..segment.num_samples() {
        for c in 0..segment.channels() {
            writer
                .write_sample(segment.samples()[(c, i)] as f32)
                .map_err(|source| WavError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
        }
    }
    writer.finalize().map_err(|source| WavError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}

pub fn write_wav_i16(path: &Path, segment: &WaveformSegment) -> Result<(), WavError> {
    let spec = WavSpec {
        channels: segment.channels() as u16,
        sample_rate: segment.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|source| WavError::Io {
        path: path.display().to_string(),
        source,
    })?;
    for i in 0..segment.num_samples() {
        for c in 0..segment.channels() {
            let v = (segment.samples()[(c, i)] * 32768.0).clamp(-32768.0, 32767.0) as i16;
            writer.write_sample(v).map_err(|source| WavError::Io {
                path: path.display().to_string(),
                source,
            })?;
        }
    }
    writer.finalize().map_err(|source| WavError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn float_round_trip_is_lossless_in_f32() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..500).map(|_| rng.random_range(-1.0..1.0) as f32 as f64).collect())
            .collect();
        let seg = WaveformSegment::from_channels(rows, 16000, 0.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        write_wav_f32(&path, &seg).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.channels(), 3);
        assert_eq!(back.sample_rate(), 16000);
        assert_eq!(back.samples(), seg.samples());
    }

    #[test]
    fn pcm16_round_trip_within_quantization() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let rows: Vec<Vec<f64>> =
            vec![(0..200).map(|_| rng.random_range(-0.9..0.9)).collect()];
        let seg = WaveformSegment::from_channels(rows, 8000, 0.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        write_wav_i16(&path, &seg).unwrap();
        let back = read_wav(&path).unwrap();
        for (a, b) in seg.samples().iter().zip(back.samples().iter()) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }
}
