//! Gammatone cepstral coefficients (GTCC).
//!
//! 64 gammatone-shaped bands spanning 20-22050 Hz, applied to the frame
//! power spectrum. Band log-energies are decorrelated with an orthonormal
//! DCT-II; all 64 coefficients are kept.

use super::spectrum::{dct_ii_orthonormal, SpectrumAnalyzer, LOG_FLOOR};
use super::{FREQ_HI, FREQ_LO};

/// Number of gammatone bands and output coefficients.
pub const GTCC_BANDS: usize = 64;

/// ERB-rate scale (Glasberg & Moore).
pub fn erb_rate(freq_hz: f64) -> f64 {
    21.4 * (1.0 + 0.00437 * freq_hz).log10()
}

pub fn erb_rate_inverse(rate: f64) -> f64 {
    (10f64.powf(rate / 21.4) - 1.0) / 0.00437
}

/// Equivalent rectangular bandwidth at a center frequency.
pub fn erb_bandwidth(freq_hz: f64) -> f64 {
    24.7 + 0.107939 * freq_hz
}

pub struct GtccExtractor {
    analyzer: SpectrumAnalyzer,
    /// GTCC_BANDS rows of per-bin weights, each normalized to unit sum.
    weights: Vec<Vec<f64>>,
    lo: f64,
    hi: f64,
}

impl GtccExtractor {
    pub fn new(sample_rate: u32) -> Self {
        Self::with_frame_len(sample_rate, (0.05 * sample_rate as f64).round() as usize)
    }

    pub fn with_frame_len(sample_rate: u32, frame_len: usize) -> Self {
        let analyzer = SpectrumAnalyzer::for_frame_len(frame_len);
        let lo = FREQ_LO;
        let hi = FREQ_HI.min(sample_rate as f64 / 2.0);
        let centers = band_centers(lo, hi, GTCC_BANDS);
        let bins = analyzer.bins();
        let mut weights = Vec::with_capacity(GTCC_BANDS);
        for &fc in &centers {
            let b = 1.019 * erb_bandwidth(fc);
            let mut row = Vec::with_capacity(bins);
            let mut sum = 0.0;
            for k in 0..bins {
                let f = analyzer.bin_freq(k, sample_rate);
                // Fourth-order gammatone magnitude-squared approximation.
                let u = (f - fc) / b;
                let w = (1.0 + u * u).powi(-2);
                sum += w;
                row.push(w);
            }
            if sum > 0.0 {
                for w in &mut row {
                    *w /= sum;
                }
            }
            weights.push(row);
        }
        Self { analyzer, weights, lo, hi }
    }

    /// Frequency range covered by the filterbank.
    pub fn freq_range(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    /// 64 gammatone cepstral coefficients of one windowed frame.
    pub fn extract(&self, frame: &[f64]) -> Vec<f64> {
        let power = self.analyzer.power(frame);
        let log_energies: Vec<f64> = self
            .weights
            .iter()
            .map(|row| {
                let e: f64 = row.iter().zip(&power).map(|(w, p)| w * p).sum();
                e.max(LOG_FLOOR).ln()
            })
            .collect();
        dct_ii_orthonormal(&log_energies)
    }
}

/// Band center frequencies equally spaced on the ERB-rate scale.
pub fn band_centers(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let e_lo = erb_rate(lo);
    let e_hi = erb_rate(hi);
    (0..n)
        .map(|m| erb_rate_inverse(e_lo + (e_hi - e_lo) * m as f64 / (n - 1) as f64))
        .collect()
}
