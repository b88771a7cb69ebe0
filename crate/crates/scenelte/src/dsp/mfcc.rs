//! Mel-frequency cepstral coefficients.
//!
//! 40 triangular mel bands, 20 cepstral coefficients including the 0th,
//! and delta/acceleration coefficients from a 9-frame regression window,
//! giving the 60-dimensional vectors used by the MFCC channel.

use super::spectrum::{dct_ii_orthonormal, SpectrumAnalyzer, LOG_FLOOR};
use super::{FREQ_HI, FREQ_LO};

pub const MEL_BANDS: usize = 40;
pub const MFCC_STATIC: usize = 20;
/// Regression half-width: a 9-frame window spans t-4 .. t+4.
pub const DELTA_HALF_WIDTH: usize = 4;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

pub struct MfccExtractor {
    analyzer: SpectrumAnalyzer,
    /// MEL_BANDS triangular filters over the one-sided spectrum.
    filterbank: Vec<Vec<f64>>,
}

impl MfccExtractor {
    pub fn new(sample_rate: u32) -> Self {
        Self::with_frame_len(sample_rate, (0.05 * sample_rate as f64).round() as usize)
    }

    pub fn with_frame_len(sample_rate: u32, frame_len: usize) -> Self {
        let analyzer = SpectrumAnalyzer::for_frame_len(frame_len);
        let lo = FREQ_LO;
        let hi = FREQ_HI.min(sample_rate as f64 / 2.0);
        let mel_lo = hz_to_mel(lo);
        let mel_hi = hz_to_mel(hi);
        // MEL_BANDS + 2 edge points define MEL_BANDS triangles.
        let edges: Vec<f64> = (0..MEL_BANDS + 2)
            .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (MEL_BANDS + 1) as f64))
            .collect();
        let bins = analyzer.bins();
        let mut filterbank = Vec::with_capacity(MEL_BANDS);
        for m in 0..MEL_BANDS {
            let (a, b, c) = (edges[m], edges[m + 1], edges[m + 2]);
            let mut row = vec![0.0; bins];
            for (k, slot) in row.iter_mut().enumerate() {
                let f = analyzer.bin_freq(k, sample_rate);
                if f > a && f < c {
                    *slot = if f <= b { (f - a) / (b - a) } else { (c - f) / (c - b) };
                }
            }
            filterbank.push(row);
        }
        Self { analyzer, filterbank }
    }

    /// 20 static MFCCs (including the 0th coefficient) of one windowed frame.
    pub fn extract(&self, frame: &[f64]) -> Vec<f64> {
        let power = self.analyzer.power(frame);
        let log_energies: Vec<f64> = self
            .filterbank
            .iter()
            .map(|row| {
                let e: f64 = row.iter().zip(&power).map(|(w, p)| w * p).sum();
                e.max(LOG_FLOOR).ln()
            })
            .collect();
        let mut cepstra = dct_ii_orthonormal(&log_energies);
        cepstra.truncate(MFCC_STATIC);
        cepstra
    }
}

/// Append delta and acceleration coefficients to a static-feature sequence.
///
/// Standard regression deltas over +-4 frames with edge replication, so a
/// sequence shorter than the window never fails. For D-dimensional input
/// the output vectors are 3D-dimensional: static, delta, acceleration.
pub fn add_deltas(frames: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let deltas = regression_delta(frames);
    let accels = regression_delta(&deltas);
    frames
        .iter()
        .zip(deltas.iter().zip(&accels))
        .map(|(s, (d, a))| {
            let mut v = Vec::with_capacity(s.len() * 3);
            v.extend_from_slice(s);
            v.extend_from_slice(d);
            v.extend_from_slice(a);
            v
        })
        .collect()
}

fn regression_delta(frames: &[Vec<f64>]) -> Vec<Vec<f64>> {
    if frames.is_empty() {
        return Vec::new();
    }
    let dim = frames[0].len();
    let t_max = frames.len() as isize - 1;
    let denom: f64 = 2.0 * (1..=DELTA_HALF_WIDTH).map(|n| (n * n) as f64).sum::<f64>();
    let clamp = |t: isize| frames[t.clamp(0, t_max) as usize].as_slice();
    (0..frames.len())
        .map(|t| {
            let t = t as isize;
            let mut out = vec![0.0; dim];
            for n in 1..=DELTA_HALF_WIDTH as isize {
                let fwd = clamp(t + n);
                let bwd = clamp(t - n);
                for d in 0..dim {
                    out[d] += n as f64 * (fwd[d] - bwd[d]);
                }
            }
            for v in &mut out {
                *v /= denom;
            }
            out
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn sixty_equals_20_static_plus_20_delta_plus_20_accel() {
        let frames: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64; MFCC_STATIC]).collect();
        let full = add_deltas(&frames);
        assert_eq!(full[0].len(), 60);
    }

    #[test]
    fn constant_sequence_has_zero_deltas() {
        let frames: Vec<Vec<f64>> = (0..10).map(|_| vec![1.25; 5]).collect();
        let full = add_deltas(&frames);
        for frame in &full {
            for &v in &frame[5..] {
                assert_abs_diff_eq!(v, 0.0, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn short_sequences_replicate_edges_instead_of_failing() {
        let frames = vec![vec![2.0, -1.0]];
        let full = add_deltas(&frames);
        assert_eq!(full.len(), 1);
        assert_eq!(full[0].len(), 6);
        // A single frame replicated across the window has zero slope.
        for &v in &full[0][2..] {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn linear_ramp_has_constant_unit_delta() {
        let frames: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let full = add_deltas(&frames);
        // Interior frames see the exact slope of 1 per frame.
        for frame in full.iter().take(16).skip(4) {
            assert_abs_diff_eq!(frame[1], 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn static_output_has_20_coefficients_and_is_finite() {
        let extractor = MfccExtractor::new(44_100);
        let frame: Vec<f64> = (0..2205)
            .map(|i| (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / 44_100.0).sin())
            .collect();
        let mfcc = extractor.extract(&frame);
        assert_eq!(mfcc.len(), MFCC_STATIC);
        assert!(mfcc.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn mel_scale_round_trips() {
        for f in [20.0, 440.0, 4000.0, 22_050.0] {
            assert_abs_diff_eq!(mel_to_hz(hz_to_mel(f)), f, epsilon = 1e-6);
        }
    }
}
