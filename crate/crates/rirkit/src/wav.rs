//! WAV reading and writing.
//!
//! Accepts mono 16 kHz files in PCM 16-bit or IEEE float-32; everything else
//! is rejected with a descriptive error so no silent resampling or channel
//! mixing ever happens.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};
use crate::signal::{AudioBuffer, WORKING_SAMPLE_RATE};

const I16_SCALE: f64 = 32_768.0;

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let mut reader =
        WavReader::open(path).map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Wav(format!(
            "{}: expected mono, got {} channels",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_rate != WORKING_SAMPLE_RATE {
        return Err(Error::Wav(format!(
            "{}: expected {WORKING_SAMPLE_RATE} Hz, got {} Hz (resampling is not performed)",
            path.display(),
            spec.sample_rate
        )));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / I16_SCALE))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?,
        (format, bits) => {
            return Err(Error::Wav(format!(
                "{}: unsupported sample format {format:?}/{bits}-bit (want PCM 16 or float 32)",
                path.display()
            )))
        }
    };
    AudioBuffer::new(samples, spec.sample_rate)
}

/// Writes IEEE float-32 samples. Values are not clipped.
pub fn write_wav_f32(path: impl AsRef<Path>, audio: &AudioBuffer) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate(),
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let path = path.as_ref();
    let mut writer =
        WavWriter::create(path, spec).map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    for &s in audio.samples() {
        writer
            .write_sample(s as f32)
            .map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    }
    writer
        .finalize()
        .map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    Ok(())
}

/// Writes PCM 16-bit samples, clamping to the representable range.
pub fn write_wav_i16(path: impl AsRef<Path>, audio: &AudioBuffer) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let path = path.as_ref();
    let mut writer =
        WavWriter::create(path, spec).map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    for &s in audio.samples() {
        let v = (s * I16_SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        writer
            .write_sample(v)
            .map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    }
    writer
        .finalize()
        .map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    Ok(())
}
