//! Log-frequency filterbank composite features.
//!
//! Per frame: 20 log-frequency band log-energies plus their first and
//! second derivatives (60), zero-crossing rate, short-time energy, four
//! sub-band log-energies, spectral centroid, and spectral bandwidth —
//! 68 dimensions in total. The actual dimension is exposed as
//! [`LOGFB_DIM`] and recorded in tensor metadata.

use super::mfcc::add_deltas;
use super::spectrum::{SpectrumAnalyzer, LOG_FLOOR};
use super::{FREQ_HI, FREQ_LO};

pub const LOGFB_BANDS: usize = 20;
pub const SUB_BANDS: usize = 4;
/// 20 bands + 20 deltas + 20 accels + zcr + ste + 4 sub-bands + centroid + bandwidth.
pub const LOGFB_DIM: usize = 3 * LOGFB_BANDS + 2 + SUB_BANDS + 2;

struct LogfbAnalyzer {
    analyzer: SpectrumAnalyzer,
    filterbank: Vec<Vec<f64>>,
    sub_band_edges: Vec<f64>,
    sample_rate: u32,
}

impl LogfbAnalyzer {
    fn new(sample_rate: u32, frame_len: usize) -> Self {
        let analyzer = SpectrumAnalyzer::for_frame_len(frame_len);
        let lo = FREQ_LO;
        let hi = FREQ_HI.min(sample_rate as f64 / 2.0);
        // Triangles on a logarithmic frequency axis.
        let ln_lo = lo.ln();
        let ln_hi = hi.ln();
        let edges: Vec<f64> = (0..LOGFB_BANDS + 2)
            .map(|i| (ln_lo + (ln_hi - ln_lo) * i as f64 / (LOGFB_BANDS + 1) as f64).exp())
            .collect();
        let bins = analyzer.bins();
        let mut filterbank = Vec::with_capacity(LOGFB_BANDS);
        for m in 0..LOGFB_BANDS {
            let (a, b, c) = (edges[m].ln(), edges[m + 1].ln(), edges[m + 2].ln());
            let mut row = vec![0.0; bins];
            for (k, slot) in row.iter_mut().enumerate() {
                let f = analyzer.bin_freq(k, sample_rate);
                if f <= 0.0 {
                    continue;
                }
                let lf = f.ln();
                if lf > a && lf < c {
                    *slot = if lf <= b { (lf - a) / (b - a) } else { (c - lf) / (c - b) };
                }
            }
            filterbank.push(row);
        }
        let sub_band_edges: Vec<f64> = (0..=SUB_BANDS)
            .map(|i| (ln_lo + (ln_hi - ln_lo) * i as f64 / SUB_BANDS as f64).exp())
            .collect();
        Self { analyzer, filterbank, sub_band_edges, sample_rate }
    }

    fn band_log_energies(&self, power: &[f64]) -> Vec<f64> {
        self.filterbank
            .iter()
            .map(|row| {
                let e: f64 = row.iter().zip(power).map(|(w, p)| w * p).sum();
                e.max(LOG_FLOOR).ln()
            })
            .collect()
    }

    fn sub_band_log_energies(&self, power: &[f64]) -> Vec<f64> {
        let mut energies = vec![0.0; SUB_BANDS];
        for (k, &p) in power.iter().enumerate() {
            let f = self.analyzer.bin_freq(k, self.sample_rate);
            for s in 0..SUB_BANDS {
                if f >= self.sub_band_edges[s] && f < self.sub_band_edges[s + 1] {
                    energies[s] += p;
                    break;
                }
            }
        }
        energies.iter().map(|&e| e.max(LOG_FLOOR).ln()).collect()
    }

    fn centroid_and_bandwidth(&self, power: &[f64]) -> (f64, f64) {
        let total: f64 = power.iter().sum();
        if total <= 0.0 {
            return (0.0, 0.0);
        }
        let centroid: f64 = power
            .iter()
            .enumerate()
            .map(|(k, &p)| self.analyzer.bin_freq(k, self.sample_rate) * p)
            .sum::<f64>()
            / total;
        let var: f64 = power
            .iter()
            .enumerate()
            .map(|(k, &p)| {
                let d = self.analyzer.bin_freq(k, self.sample_rate) - centroid;
                d * d * p
            })
            .sum::<f64>()
            / total;
        (centroid, var.sqrt())
    }
}

/// Zero-crossing rate: fraction of strictly sign-changing consecutive pairs.
pub fn zero_crossing_rate(frame: &[f64]) -> f64 {
    if frame.len() < 2 {
        return 0.0;
    }
    let crossings = frame.windows(2).filter(|w| w[0] * w[1] < 0.0).count();
    crossings as f64 / (frame.len() - 1) as f64
}

/// Short-time energy: mean of squared samples.
pub fn short_time_energy(frame: &[f64]) -> f64 {
    if frame.is_empty() {
        return 0.0;
    }
    frame.iter().map(|x| x * x).sum::<f64>() / frame.len() as f64
}

/// Composite LOGFB feature vectors for a full frame sequence.
///
/// Derivatives need temporal context, so this operates on all frames at once.
pub fn logfb_frame_set(frames: &[Vec<f64>], sample_rate: u32) -> Vec<Vec<f64>> {
    if frames.is_empty() {
        return Vec::new();
    }
    let analyzer = LogfbAnalyzer::new(sample_rate, frames[0].len());
    let powers: Vec<Vec<f64>> = frames.iter().map(|f| analyzer.analyzer.power(f)).collect();
    let bands: Vec<Vec<f64>> = powers.iter().map(|p| analyzer.band_log_energies(p)).collect();
    let bands_with_derivs = add_deltas(&bands);
    frames
        .iter()
        .zip(powers.iter().zip(&bands_with_derivs))
        .map(|(frame, (power, banded))| {
            let mut v = Vec::with_capacity(LOGFB_DIM);
            v.extend_from_slice(banded);
            v.push(zero_crossing_rate(frame));
            v.push(short_time_energy(frame));
            v.extend(analyzer.sub_band_log_energies(power));
            let (centroid, bandwidth) = analyzer.centroid_and_bandwidth(power);
            v.push(centroid);
            v.push(bandwidth);
            v
        })
        .collect()
}
