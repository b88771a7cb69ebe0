//! WAV input/output.
//!
//! Reads mono PCM WAV (16-bit integer or 32-bit float). Stereo input is
//! downmixed to mono by averaging. Recordings at other sample rates are
//! rejected unless resampling is requested, in which case a linear
//! resampler converts to the expected rate.

use super::{AudioSignal, EXPECTED_SAMPLE_RATE};
use crate::error::{Error, Result};
use std::path::Path;

/// Read a WAV file as mono samples at its native rate, downmixing stereo
/// by averaging. Sample values are passed through unvalidated; callers that
/// must tolerate non-finite float content screen them afterwards.
pub fn read_wav_raw(path: &Path) -> Result<(Vec<f64>, u32)> {
    let mut reader =
        hound::WavReader::open(path).map_err(|e| Error::WavEncoding(format!("{path:?}: {e}")))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::WavEncoding(format!("{path:?}: zero channels")));
    }

    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::WavEncoding(format!("{path:?}: {e}")))?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::WavEncoding(format!("{path:?}: {e}")))?,
        (fmt, bits) => {
            return Err(Error::WavEncoding(format!(
                "{path:?}: unsupported format {fmt:?}/{bits}-bit (need 16-bit PCM or 32-bit float)"
            )))
        }
    };

    let mono: Vec<f64> = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f64>() / channels as f64)
            .collect()
    };
    Ok((mono, spec.sample_rate))
}

/// Read a WAV file into a mono [`AudioSignal`] at the expected rate.
pub fn read_wav(path: &Path, resample: bool) -> Result<AudioSignal> {
    let (mono, rate) = read_wav_raw(path)?;
    let samples = if rate == EXPECTED_SAMPLE_RATE {
        mono
    } else if resample {
        resample_linear(&mono, rate, EXPECTED_SAMPLE_RATE)
    } else {
        return Err(Error::SampleRate { expected: EXPECTED_SAMPLE_RATE, got: rate });
    };
    AudioSignal::new(samples, EXPECTED_SAMPLE_RATE)
}

/// Write a signal as 16-bit PCM, clamping to [-1, 1).
pub fn write_wav_i16(path: &Path, signal: &AudioSignal) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: signal.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer =
        hound::WavWriter::create(path, spec).map_err(|e| Error::WavEncoding(e.to_string()))?;
    for &x in &signal.samples {
        let v = (x.clamp(-1.0, 1.0 - 1.0 / 32768.0) * 32768.0).round() as i16;
        writer
            .write_sample(v)
            .map_err(|e| Error::WavEncoding(e.to_string()))?;
    }
    writer.finalize().map_err(|e| Error::WavEncoding(e.to_string()))?;
    Ok(())
}

/// Linear-interpolation resampler.
pub fn resample_linear(samples: &[f64], from: u32, to: u32) -> Vec<f64> {
    if from == to || samples.is_empty() {
        return samples.to_vec();
    }
    let out_len = ((samples.len() as u64 * to as u64) / from as u64) as usize;
    let ratio = from as f64 / to as f64;
    (0..out_len)
        .map(|i| {
            let pos = i as f64 * ratio;
            let idx = pos as usize;
            let frac = pos - idx as f64;
            let a = samples[idx.min(samples.len() - 1)];
            let b = samples[(idx + 1).min(samples.len() - 1)];
            a + (b - a) * frac
        })
        .collect()
}
