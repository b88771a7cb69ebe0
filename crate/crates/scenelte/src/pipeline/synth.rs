//! Synthetic scene corpus.
//!
//! A desk-scale surrogate dataset: each class is a mixture recipe of a
//! band-limited noise background plus class-specific tone-burst events at
//! random times. Classes come in similarity pairs that share the same
//! background band and differ only in their event tone, so the learned
//! label tree has non-trivial structure and the stage-one confusion matrix
//! confuses exactly the designed pairs.

use crate::dsp::wav::write_wav_i16;
use crate::dsp::AudioSignal;
use crate::error::{Error, Result};
use crate::seed::derive_seed;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub classes: usize,
    pub per_class: usize,
    pub duration: f64,
    pub seed: u64,
    pub folds: u32,
    pub sample_rate: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 6,
            per_class: 20,
            duration: 10.0,
            seed: 42,
            folds: 4,
            sample_rate: 44_100,
        }
    }
}

/// Background band (Hz) of the similarity pair a class belongs to.
fn pair_band(pair: usize, n_pairs: usize) -> (f64, f64) {
    let lo = 150.0f64;
    let hi = 5_000.0f64;
    let step = (hi / lo).powf(1.0 / n_pairs as f64);
    let band_lo = lo * step.powi(pair as i32);
    (band_lo, band_lo * step)
}

/// Event tone frequency of a class; above every background band and
/// geometrically separated between classes.
fn event_tone(class: usize, n_classes: usize) -> f64 {
    let lo = 6_500.0f64;
    let hi = 13_000.0f64;
    lo * (hi / lo).powf((class as f64 + 0.5) / n_classes as f64)
}

/// Render one recording of a class.
fn render_recording(cfg: &SynthConfig, class: usize, index: usize) -> AudioSignal {
    let n = (cfg.duration * cfg.sample_rate as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
        cfg.seed,
        &format!("synth/class{class}/rec{index}"),
    ));
    let n_pairs = cfg.classes.div_ceil(2);
    let (band_lo, band_hi) = pair_band(class / 2, n_pairs);

    // Band-limited background: white noise shaped in the frequency domain.
    let mut noise: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    bandpass_in_place(&mut noise, cfg.sample_rate, band_lo, band_hi);
    let rms = (noise.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
    let background_gain = 0.12 / rms.max(1e-12);
    let mut samples: Vec<f64> = noise.iter().map(|x| x * background_gain).collect();

    // Common wideband floor shared by every class.
    for s in samples.iter_mut() {
        *s += 0.015 * rng.gen_range(-1.0..1.0);
    }

    // Class-specific tone-burst events.
    let tone = event_tone(class, cfg.classes);
    let n_events = 3 + (rng.gen_range(0..3u32) as usize);
    for _ in 0..n_events {
        let length = rng.gen_range(0.30..0.50);
        let burst = (length * cfg.sample_rate as f64) as usize;
        let latest = n.saturating_sub(burst + 1);
        let start = rng.gen_range((0.2 * cfg.sample_rate as f64) as usize..latest.max(1));
        let detune = tone * rng.gen_range(-0.02..0.02);
        let freq = tone + detune;
        let phase0 = rng.gen_range(0.0..std::f64::consts::TAU);
        for i in 0..burst {
            let envelope =
                0.5 * (1.0 - (std::f64::consts::TAU * i as f64 / burst as f64).cos());
            let phase =
                phase0 + std::f64::consts::TAU * freq * i as f64 / cfg.sample_rate as f64;
            samples[start + i] += 0.35 * envelope * phase.sin();
        }
    }

    // Headroom guard before 16-bit quantization.
    let peak = samples.iter().cloned().fold(0.0f64, |a, b| a.max(b.abs()));
    if peak > 0.95 {
        let g = 0.95 / peak;
        for s in samples.iter_mut() {
            *s *= g;
        }
    }
    AudioSignal::new(samples, cfg.sample_rate).expect("synthetic samples are finite")
}

fn bandpass_in_place(samples: &mut [f64], sample_rate: u32, lo: f64, hi: f64) {
    let n = samples.len();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex<f64>> =
        samples.iter().map(|&x| Complex::new(x, 0.0)).collect();
    fft.process(&mut buf);
    let bin_hz = sample_rate as f64 / n as f64;
    for (k, value) in buf.iter_mut().enumerate() {
        let f = if k <= n / 2 {
            k as f64 * bin_hz
        } else {
            (n - k) as f64 * bin_hz
        };
        if f < lo || f > hi {
            *value = Complex::new(0.0, 0.0);
        }
    }
    ifft.process(&mut buf);
    let inv_n = 1.0 / n as f64;
    for (s, c) in samples.iter_mut().zip(&buf) {
        *s = c.re * inv_n;
    }
}

/// Generate the corpus; returns the manifest path.
pub fn synth_corpus(cfg: &SynthConfig, out_dir: &Path) -> Result<PathBuf> {
    if cfg.classes < 2 {
        return Err(Error::InvalidConfig("synthetic corpus needs >= 2 classes".into()));
    }
    if cfg.per_class == 0 || cfg.folds == 0 {
        return Err(Error::InvalidConfig("per_class and folds must be >= 1".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut rows = Vec::new();
    for class in 0..cfg.classes {
        let label = format!("class{class:02}");
        for index in 0..cfg.per_class {
            let signal = render_recording(cfg, class, index);
            let file = format!("{label}_r{index:03}.wav");
            write_wav_i16(&out_dir.join(&file), &signal)?;
            let fold = (index as u32 % cfg.folds) + 1;
            rows.push((format!("{label}_r{index:03}"), file, label.clone(), fold));
        }
    }
    let manifest = out_dir.join("manifest.csv");
    super::manifest::write_manifest(&manifest, &rows)?;
    Ok(manifest)
}

/// The designed similarity pairs: classes (2k, 2k+1) share a background.
pub fn designed_pairs(classes: usize) -> Vec<(u32, u32)> {
    (0..classes / 2).map(|k| ((2 * k) as u32, (2 * k + 1) as u32)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::manifest::ingest_dataset;
    use sha2::{Digest, Sha256};
    use tempfile::tempdir;

    fn quick_cfg() -> SynthConfig {
        SynthConfig {
            classes: 4,
            per_class: 4,
            duration: 1.0,
            seed: 7,
            folds: 4,
            sample_rate: 16_000,
        }
    }

    #[test]
    fn corpus_has_expected_files_and_folds() {
        let dir = tempdir().unwrap();
        let manifest_path = synth_corpus(&quick_cfg(), dir.path()).unwrap();
        let manifest = ingest_dataset(&manifest_path).unwrap();
        assert_eq!(manifest.entries.len(), 16);
        assert_eq!(manifest.classes.len(), 4);
        assert_eq!(manifest.num_folds(), 4);
        // Stratified: every class appears in every fold for per_class = folds.
        for class in &manifest.classes {
            let folds: std::collections::HashSet<u32> = manifest
                .entries
                .iter()
                .filter(|e| &e.label == class)
                .map(|e| e.fold)
                .collect();
            assert_eq!(folds.len(), 4);
        }
    }

    #[test]
    fn same_seed_gives_bit_identical_corpus() {
        let hash_of = |dir: &Path| {
            let mut names: Vec<PathBuf> = std::fs::read_dir(dir)
                .unwrap()
                .map(|e| e.unwrap().path())
                .collect();
            names.sort();
            let mut hasher = Sha256::new();
            for p in names {
                hasher.update(std::fs::read(&p).unwrap());
            }
            hasher.finalize()
        };
        let a = tempdir().unwrap();
        let b = tempdir().unwrap();
        synth_corpus(&quick_cfg(), a.path()).unwrap();
        synth_corpus(&quick_cfg(), b.path()).unwrap();
        assert_eq!(hash_of(a.path()), hash_of(b.path()));
    }

    #[test]
    fn different_seeds_differ() {
        let a = tempdir().unwrap();
        let b = tempdir().unwrap();
        synth_corpus(&quick_cfg(), a.path()).unwrap();
        synth_corpus(&SynthConfig { seed: 8, ..quick_cfg() }, b.path()).unwrap();
        let read = |d: &Path| std::fs::read(d.join("class00_r000.wav")).unwrap();
        assert_ne!(read(a.path()), read(b.path()));
    }

    #[test]
    fn pair_bands_are_disjoint_and_ordered() {
        for n_pairs in [2usize, 3, 4] {
            let bands: Vec<(f64, f64)> = (0..n_pairs).map(|p| pair_band(p, n_pairs)).collect();
            for w in bands.windows(2) {
                assert!(w[0].1 <= w[1].0 + 1e-9);
            }
        }
    }

    #[test]
    fn event_tones_sit_above_backgrounds() {
        for c in 0..6 {
            let tone = event_tone(c, 6);
            assert!(tone > 5_000.0 && tone < 22_050.0);
        }
    }

    #[test]
    fn degenerate_configs_are_rejected() {
        let dir = tempdir().unwrap();
        assert!(synth_corpus(&SynthConfig { classes: 1, ..quick_cfg() }, dir.path()).is_err());
        assert!(synth_corpus(&SynthConfig { per_class: 0, ..quick_cfg() }, dir.path()).is_err());
    }
}
