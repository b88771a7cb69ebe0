//! Background-noise subtraction.
//!
//! STFT magnitude subtraction against a minimum-statistics noise floor:
//! the per-bin noise power is a bias-compensated sliding minimum of the
//! time-smoothed periodogram, tracked over `min_window` seconds. Stationary
//! background is attenuated while short foreground events (shorter than the
//! tracking window) are retained. Phase is preserved and the output has the
//! same length as the input.

use super::AudioSignal;
use crate::error::{Error, Result};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// First-order recursive smoothing constant for the periodogram.
const SMOOTH_ALPHA: f64 = 0.95;
/// Frames averaged to initialize the smoother, so the sliding minimum is
/// not dominated by a single low periodogram draw at the signal start.
const INIT_FRAMES: usize = 8;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DenoiseConfig {
    /// STFT length in samples; must be a power of two.
    pub fft_len: usize,
    /// Span of the sliding-minimum noise tracker in seconds (>= 0.5 s).
    pub min_window: f64,
    /// Bias compensation applied to the minimum statistic (>= 1).
    pub bias_comp: f64,
    /// Spectral floor: output magnitude never drops below `floor_beta * |X|`.
    pub floor_beta: f64,
}

impl DenoiseConfig {
    pub fn new(fft_len: usize, min_window: f64, bias_comp: f64, floor_beta: f64) -> Result<Self> {
        if !fft_len.is_power_of_two() || fft_len < 64 {
            return Err(Error::InvalidConfig(format!(
                "fft_len must be a power of two >= 64, got {fft_len}"
            )));
        }
        if min_window < 0.5 {
            return Err(Error::InvalidConfig(format!(
                "min_window must be >= 0.5 s, got {min_window}"
            )));
        }
        if bias_comp < 1.0 {
            return Err(Error::InvalidConfig(format!(
                "bias_comp must be >= 1, got {bias_comp}"
            )));
        }
        if !(0.0 < floor_beta && floor_beta < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "floor_beta must lie in (0,1), got {floor_beta}"
            )));
        }
        Ok(Self { fft_len, min_window, bias_comp, floor_beta })
    }
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        Self { fft_len: 2048, min_window: 1.5, bias_comp: 1.5, floor_beta: 0.01 }
    }
}

/// Subtract the estimated stationary noise magnitude spectrum.
pub fn spectral_subtract(signal: &AudioSignal, cfg: &DenoiseConfig) -> Result<AudioSignal> {
    let min_window_samples = (cfg.min_window * signal.sample_rate as f64).round() as usize;
    if signal.len() < min_window_samples {
        return Err(Error::SignalTooShort {
            need: min_window_samples,
            got: signal.len(),
        });
    }

    let n = cfg.fft_len;
    let hop = n / 2;
    // WOLA pair: sqrt-Hann analysis and synthesis windows. Their product is
    // a Hann window, which at 50% overlap sums to exactly 1, so modified
    // frames overlap-add without any window-sum division.
    let window: Vec<f64> = periodic_hann(n).iter().map(|w| w.sqrt()).collect();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);

    // The signal is padded with one hop of leading zeros plus a zero tail so
    // that every real sample is covered by two frames.
    let num_frames = (hop + signal.len()).div_ceil(hop) + 1;
    let sample_at = |padded_idx: usize| -> f64 {
        if padded_idx < hop {
            0.0
        } else {
            signal.samples.get(padded_idx - hop).copied().unwrap_or(0.0)
        }
    };
    let mut spectra: Vec<Vec<Complex<f64>>> = Vec::with_capacity(num_frames);
    for t in 0..num_frames {
        let start = t * hop;
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = Complex::new(sample_at(start + i) * window[i], 0.0);
        }
        fft.process(&mut buf);
        spectra.push(buf);
    }

    let bins = n / 2 + 1;
    let track = ((cfg.min_window * signal.sample_rate as f64 / hop as f64).ceil() as usize).max(1);

    // Per-bin: smooth the periodogram, track its causal sliding minimum,
    // and shrink the magnitude. The subtracted noise magnitude is
    // bias_comp * sqrt(min smoothed power).
    let mut gains = vec![vec![0.0f64; bins]; num_frames];
    for k in 0..bins {
        let mut smoothed = Vec::with_capacity(num_frames);
        let warmup = INIT_FRAMES.min(num_frames);
        let mut prev = spectra[..warmup]
            .iter()
            .map(|frame| frame[k].norm_sqr())
            .sum::<f64>()
            / warmup as f64;
        for frame in spectra.iter() {
            let p = frame[k].norm_sqr();
            prev = SMOOTH_ALPHA * prev + (1.0 - SMOOTH_ALPHA) * p;
            smoothed.push(prev);
        }
        // Monotonic deque for the causal sliding minimum over `track` frames.
        let mut deque: std::collections::VecDeque<usize> = std::collections::VecDeque::new();
        for t in 0..num_frames {
            while let Some(&back) = deque.back() {
                if smoothed[back] >= smoothed[t] {
                    deque.pop_back();
                } else {
                    break;
                }
            }
            deque.push_back(t);
            while *deque.front().unwrap() + track <= t {
                deque.pop_front();
            }
            let noise_mag = cfg.bias_comp * smoothed[*deque.front().unwrap()].sqrt();
            let mag = spectra[t][k].norm();
            let out_mag = (mag - noise_mag).max(cfg.floor_beta * mag);
            gains[t][k] = if mag > 0.0 { out_mag / mag } else { 0.0 };
        }
    }

    // Apply gains (mirrored onto the negative-frequency bins), resynthesize
    // with the synthesis window, and trim the padding.
    let padded_len = (num_frames - 1) * hop + n;
    let mut acc = vec![0.0f64; padded_len];
    let inv_n = 1.0 / n as f64;
    for (t, frame) in spectra.iter_mut().enumerate() {
        for k in 0..n {
            let bin = if k < bins { k } else { n - k };
            frame[k] *= gains[t][bin];
        }
        ifft.process(frame);
        let start = t * hop;
        for i in 0..n {
            acc[start + i] += frame[i].re * inv_n * window[i];
        }
    }
    let samples: Vec<f64> = (0..signal.len()).map(|i| acc[hop + i]).collect();
    AudioSignal::new(samples, signal.sample_rate)
}

fn periodic_hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()))
        .collect()
}
