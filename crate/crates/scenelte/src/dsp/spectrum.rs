//! Shared spectral primitives: one-sided power spectra and the orthonormal DCT-II.

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Floor applied before every logarithm so that silent input never
/// produces -inf or NaN.
pub const LOG_FLOOR: f64 = 1e-10;

/// One-sided power-spectrum analyzer with a cached FFT plan.
pub struct SpectrumAnalyzer {
    nfft: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl SpectrumAnalyzer {
    pub fn new(nfft: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(nfft);
        Self { nfft, fft }
    }

    /// Smallest power of two that holds `frame_len` samples.
    pub fn for_frame_len(frame_len: usize) -> Self {
        Self::new(frame_len.next_power_of_two())
    }

    pub fn nfft(&self) -> usize {
        self.nfft
    }

    /// Number of one-sided bins (nfft/2 + 1).
    pub fn bins(&self) -> usize {
        self.nfft / 2 + 1
    }

    /// Center frequency of bin `k` in Hz.
    pub fn bin_freq(&self, k: usize, sample_rate: u32) -> f64 {
        k as f64 * sample_rate as f64 / self.nfft as f64
    }

    /// One-sided power spectrum |X_k|^2 of a (zero-padded) real frame.
    pub fn power(&self, frame: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = frame
            .iter()
            .take(self.nfft)
            .map(|&x| Complex::new(x, 0.0))
            .collect();
        buf.resize(self.nfft, Complex::new(0.0, 0.0));
        self.fft.process(&mut buf);
        buf[..self.bins()].iter().map(|c| c.norm_sqr()).collect()
    }
}

/// Orthonormal DCT-II of a real vector.
///
/// X_k = s_k * sum_n x_n cos(pi (2n+1) k / (2N)) with s_0 = sqrt(1/N),
/// s_k = sqrt(2/N). A constant input maps to (c*sqrt(N), 0, ..., 0).
pub fn dct_ii_orthonormal(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let nf = n as f64;
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut acc = 0.0;
        for (i, &xi) in x.iter().enumerate() {
            acc += xi * (std::f64::consts::PI * (2.0 * i as f64 + 1.0) * k as f64 / (2.0 * nf)).cos();
        }
        let scale = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
        out.push(scale * acc);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn dct_of_constant_has_single_component() {
        let x = vec![3.5; 16];
        let d = dct_ii_orthonormal(&x);
        assert_abs_diff_eq!(d[0], 3.5 * 4.0, epsilon = 1e-12);
        for &v in &d[1..] {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn dct_is_orthonormal() {
        // Orthonormality: ||DCT(x)|| == ||x||.
        let x: Vec<f64> = (0..32).map(|i| ((i * 7 + 3) % 13) as f64 - 6.0).collect();
        let d = dct_ii_orthonormal(&x);
        let nx: f64 = x.iter().map(|v| v * v).sum();
        let nd: f64 = d.iter().map(|v| v * v).sum();
        assert_abs_diff_eq!(nx, nd, epsilon = 1e-9);
    }

    #[test]
    fn power_spectrum_of_tone_peaks_at_tone_bin() {
        let nfft = 1024;
        let fs = 16000u32;
        let analyzer = SpectrumAnalyzer::new(nfft);
        // Tone exactly on bin 64 -> 1000 Hz.
        let freq = analyzer.bin_freq(64, fs);
        let frame: Vec<f64> = (0..nfft)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / fs as f64).sin())
            .collect();
        let p = analyzer.power(&frame);
        let peak = p
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(peak, 64);
    }

    #[test]
    fn power_of_zero_frame_is_zero() {
        let analyzer = SpectrumAnalyzer::new(256);
        let p = analyzer.power(&vec![0.0; 100]);
        assert!(p.iter().all(|&v| v == 0.0));
    }
}
