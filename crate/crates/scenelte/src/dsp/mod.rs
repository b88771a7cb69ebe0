//! Low-level audio feature extraction.
//!
//! Three feature families are extracted from 50 ms / 50%-overlap frames and
//! aggregated into 500 ms / 250 ms-hop segment matrices:
//!
//! * GTCC — 64 gammatone cepstral coefficients (20-22050 Hz),
//! * MFCC — 60-dimensional MFCCs (20 static + 20 delta + 20 acceleration),
//! * LOGFB — 20 log-frequency band energies with derivatives plus
//!   zero-crossing rate, short-time energy, four sub-band energies,
//!   spectral centroid, and spectral bandwidth (68 dimensions).
//!
//! A spectral-subtraction denoiser produces the "without background noise"
//! signal variants that double the channel count.

pub mod denoise;
pub mod gtcc;
pub mod logfb;
pub mod mfcc;
pub mod spectrum;
pub mod wav;

use crate::error::{Error, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use denoise::{spectral_subtract, DenoiseConfig};
pub use spectrum::LOG_FLOOR;

/// Default sample rate the pipeline expects.
pub const EXPECTED_SAMPLE_RATE: u32 = 44_100;

/// Frame length in seconds (50 ms).
pub const FRAME_LEN_S: f64 = 0.05;
/// Frame hop in seconds (25 ms, 50% overlap).
pub const FRAME_HOP_S: f64 = 0.025;
/// Segment length in seconds (500 ms).
pub const SEGMENT_LEN_S: f64 = 0.5;
/// Segment hop in seconds (250 ms overlap).
pub const SEGMENT_HOP_S: f64 = 0.25;

/// Lower edge of all filterbanks in Hz.
pub const FREQ_LO: f64 = 20.0;
/// Upper edge of all filterbanks in Hz (clamped to Nyquist).
pub const FREQ_HI: f64 = 22_050.0;

/// A mono audio signal.
#[derive(Debug, Clone)]
pub struct AudioSignal {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioSignal {
    /// Validates that the sample rate is positive and all samples are finite.
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidConfig("sample_rate must be > 0".into()));
        }
        if let Some(idx) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteSample(idx));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Analysis window shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindowKind {
    Hamming,
    Rectangular,
}

impl WindowKind {
    pub fn coefficients(&self, len: usize) -> Vec<f64> {
        match self {
            WindowKind::Rectangular => vec![1.0; len],
            WindowKind::Hamming => (0..len)
                .map(|i| {
                    0.54 - 0.46
                        * (2.0 * std::f64::consts::PI * i as f64 / (len.max(2) - 1) as f64).cos()
                })
                .collect(),
        }
    }
}

/// Frame decomposition grid.
#[derive(Debug, Clone)]
pub struct FrameGrid {
    pub frame_len: f64,
    pub hop: f64,
    pub window: WindowKind,
}

impl FrameGrid {
    pub fn new(frame_len: f64, hop: f64, window: WindowKind) -> Result<Self> {
        if !(hop > 0.0 && hop <= frame_len) {
            return Err(Error::InvalidConfig(format!(
                "frame grid requires 0 < hop <= frame_len, got hop={hop}, frame_len={frame_len}"
            )));
        }
        Ok(Self { frame_len, hop, window })
    }

    /// The 50 ms / 50% overlap Hamming grid used by all feature families.
    pub fn standard() -> Self {
        Self {
            frame_len: FRAME_LEN_S,
            hop: FRAME_HOP_S,
            window: WindowKind::Hamming,
        }
    }

    pub fn len_samples(&self, sample_rate: u32) -> usize {
        (self.frame_len * sample_rate as f64).round() as usize
    }

    /// Hop in samples. Floored so that the frame count matches
    /// floor((duration - frame_len)/hop) + 1 at rates where the hop is
    /// not an integer number of samples.
    pub fn hop_samples(&self, sample_rate: u32) -> usize {
        ((self.hop * sample_rate as f64).floor() as usize).max(1)
    }
}

/// Decompose a signal into windowed frames lying fully inside the signal.
///
/// Frame i starts at `i * hop`; there is no zero-padded tail frame.
pub fn frame_signal(signal: &AudioSignal, grid: &FrameGrid) -> Result<Vec<Vec<f64>>> {
    let flen = grid.len_samples(signal.sample_rate);
    let fhop = grid.hop_samples(signal.sample_rate);
    if signal.len() < flen {
        return Err(Error::SignalTooShort {
            need: flen,
            got: signal.len(),
        });
    }
    let window = grid.window.coefficients(flen);
    let count = (signal.len() - flen) / fhop + 1;
    let mut frames = Vec::with_capacity(count);
    for i in 0..count {
        let start = i * fhop;
        let frame: Vec<f64> = signal.samples[start..start + flen]
            .iter()
            .zip(&window)
            .map(|(x, w)| x * w)
            .collect();
        frames.push(frame);
    }
    Ok(frames)
}

/// Start sample of frame `i`.
pub fn frame_start(i: usize, grid: &FrameGrid, sample_rate: u32) -> usize {
    i * grid.hop_samples(sample_rate)
}

/// The three low-level feature families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureFamily {
    Gtcc,
    Mfcc,
    Logfb,
}

impl FeatureFamily {
    pub fn name(&self) -> &'static str {
        match self {
            FeatureFamily::Gtcc => "gtcc",
            FeatureFamily::Mfcc => "mfcc",
            FeatureFamily::Logfb => "logfb",
        }
    }
}

/// Whether a channel is extracted from the raw or the denoised signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NoiseVariant {
    Raw,
    Denoised,
}

/// One of the six (feature family x noise variant) channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Channel {
    pub family: FeatureFamily,
    pub variant: NoiseVariant,
}

impl Channel {
    /// Canonical channel order: the three families on the raw signal,
    /// then the three families on the denoised signal.
    pub const ALL: [Channel; 6] = [
        Channel { family: FeatureFamily::Gtcc, variant: NoiseVariant::Raw },
        Channel { family: FeatureFamily::Mfcc, variant: NoiseVariant::Raw },
        Channel { family: FeatureFamily::Logfb, variant: NoiseVariant::Raw },
        Channel { family: FeatureFamily::Gtcc, variant: NoiseVariant::Denoised },
        Channel { family: FeatureFamily::Mfcc, variant: NoiseVariant::Denoised },
        Channel { family: FeatureFamily::Logfb, variant: NoiseVariant::Denoised },
    ];

    /// The three raw channels, in canonical order.
    pub const RAW: [Channel; 3] = [
        Channel { family: FeatureFamily::Gtcc, variant: NoiseVariant::Raw },
        Channel { family: FeatureFamily::Mfcc, variant: NoiseVariant::Raw },
        Channel { family: FeatureFamily::Logfb, variant: NoiseVariant::Raw },
    ];

    pub fn tag(&self) -> String {
        let suffix = match self.variant {
            NoiseVariant::Raw => "raw",
            NoiseVariant::Denoised => "denoised",
        };
        format!("{}-{}", self.family.name(), suffix)
    }

    pub fn parse(tag: &str) -> Result<Channel> {
        let (family, variant) = tag
            .split_once('-')
            .ok_or_else(|| Error::InvalidConfig(format!("bad channel tag {tag:?}")))?;
        let family = match family {
            "gtcc" => FeatureFamily::Gtcc,
            "mfcc" => FeatureFamily::Mfcc,
            "logfb" => FeatureFamily::Logfb,
            _ => return Err(Error::InvalidConfig(format!("bad channel tag {tag:?}"))),
        };
        let variant = match variant {
            "raw" => NoiseVariant::Raw,
            "denoised" => NoiseVariant::Denoised,
            _ => return Err(Error::InvalidConfig(format!("bad channel tag {tag:?}"))),
        };
        Ok(Channel { family, variant })
    }
}

/// M x T matrix of segment-level features for one recording and one channel.
#[derive(Debug, Clone)]
pub struct SegmentMatrix {
    /// M x T; column t holds the feature vector of segment t.
    pub values: Array2<f64>,
    pub channel: Channel,
}

impl SegmentMatrix {
    pub fn feature_dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_segments(&self) -> usize {
        self.values.ncols()
    }

    /// Remove the listed segment columns (used for erroneous-segment removal).
    /// Out-of-range indices are ignored; at least one column must remain.
    pub fn drop_segments(&self, drop: &[usize]) -> Result<SegmentMatrix> {
        let keep: Vec<usize> = (0..self.num_segments()).filter(|t| !drop.contains(t)).collect();
        if keep.is_empty() {
            return Err(Error::ShapeMismatch(
                "dropping all segments would leave an empty matrix".into(),
            ));
        }
        let mut values = Array2::zeros((self.feature_dim(), keep.len()));
        for (new_t, &old_t) in keep.iter().enumerate() {
            values.column_mut(new_t).assign(&self.values.column(old_t));
        }
        Ok(SegmentMatrix { values, channel: self.channel })
    }
}

/// Sample-domain layout of the 500 ms / 250 ms segment grid.
#[derive(Debug, Clone, Copy)]
pub struct SegmentLayout {
    pub seg_len: usize,
    pub seg_hop: usize,
    pub count: usize,
}

/// Segment count for a signal of `total_samples` at `sample_rate`.
///
/// Segments of 500 ms with a 250 ms hop. A trailing segment whose end
/// coincides exactly with the signal end is dropped (a 30 s recording
/// yields 118 segments, not 119), except that a signal of exactly one
/// segment length still yields one segment.
pub fn segment_layout(total_samples: usize, sample_rate: u32) -> Result<SegmentLayout> {
    let seg_len = (SEGMENT_LEN_S * sample_rate as f64).round() as usize;
    let seg_hop = (SEGMENT_HOP_S * sample_rate as f64).round() as usize;
    if total_samples < seg_len {
        return Err(Error::SignalTooShort {
            need: seg_len,
            got: total_samples,
        });
    }
    let count = if total_samples == seg_len {
        1
    } else {
        let q = (total_samples - seg_len) / seg_hop;
        let r = (total_samples - seg_len) % seg_hop;
        q + usize::from(r > 0)
    };
    Ok(SegmentLayout { seg_len, seg_hop, count })
}

/// Extract the segment-level feature matrix for one channel.
///
/// Each segment's vector is the arithmetic mean of the feature vectors of
/// the 50 ms frames fully contained in the segment's 500 ms span.
pub fn segment_features(signal: &AudioSignal, channel: Channel) -> Result<SegmentMatrix> {
    let grid = FrameGrid::standard();
    let frames = frame_signal(signal, &grid)?;
    let frame_feats: Vec<Vec<f64>> = match channel.family {
        FeatureFamily::Gtcc => {
            let extractor = gtcc::GtccExtractor::new(signal.sample_rate);
            frames.iter().map(|f| extractor.extract(f)).collect()
        }
        FeatureFamily::Mfcc => {
            let extractor = mfcc::MfccExtractor::new(signal.sample_rate);
            let statics: Vec<Vec<f64>> = frames.iter().map(|f| extractor.extract(f)).collect();
            mfcc::add_deltas(&statics)
        }
        FeatureFamily::Logfb => logfb::logfb_frame_set(&frames, signal.sample_rate),
    };
    segment_matrix_from_frames(&frame_feats, signal, &grid, channel)
}

fn segment_matrix_from_frames(
    frame_feats: &[Vec<f64>],
    signal: &AudioSignal,
    grid: &FrameGrid,
    channel: Channel,
) -> Result<SegmentMatrix> {
    let layout = segment_layout(signal.len(), signal.sample_rate)?;
    let fhop = grid.hop_samples(signal.sample_rate);
    let flen = grid.len_samples(signal.sample_rate);
    let dim = frame_feats.first().map(|f| f.len()).unwrap_or(0);
    let mut values = Array2::zeros((dim, layout.count));
    for t in 0..layout.count {
        let lo = t * layout.seg_hop;
        let hi = lo + layout.seg_len;
        let first = lo.div_ceil(fhop);
        let mut acc = vec![0.0; dim];
        let mut n = 0usize;
        let mut j = first;
        while j < frame_feats.len() && j * fhop + flen <= hi {
            for (a, v) in acc.iter_mut().zip(&frame_feats[j]) {
                *a += v;
            }
            n += 1;
            j += 1;
        }
        if n == 0 {
            return Err(Error::ShapeMismatch(format!(
                "segment {t} contains no complete frame"
            )));
        }
        for (d, a) in acc.iter().enumerate() {
            values[(d, t)] = a / n as f64;
        }
    }
    Ok(SegmentMatrix { values, channel })
}
