//! Event preprocessing and assembly of the three network input blocks.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array3, Axis};
use serde::{Deserialize, Serialize};

use super::LocalizeError;
use crate::audio_io::{EventRecord, MultiChannelClip, NUM_CHANNELS};
use crate::features::augment::AugmentDraw;
use crate::features::{gcc_phat_all, GccPhatSet, MelAnalyzer, DEFAULT_MAX_LAG, HOP, N_MELS};
use crate::geometry::{ContactPoint, LABEL_HALF_RANGE_M};
use crate::preprocess::{denoise_and_trim, NoiseProfile, NormStats};
use crate::proprio::ProprioTrace;

/// Frames of a 1-s window at hop 128.
pub const MEL_FRAMES: usize = 341;
/// Time bins after pooling.
pub const POOLED_FRAMES: usize = 32;
pub const MEL_DIM: usize = NUM_CHANNELS * N_MELS * POOLED_FRAMES;
pub const GCC_DIM: usize = 15 * (2 * DEFAULT_MAX_LAG + 1);
pub const PROPRIO_POINTS: usize = 9;
pub const PROPRIO_DIM: usize = 64;

const POS_SCALE: f64 = 0.1;
const VEL_SCALE: f64 = 0.5;
/// GCC-PHAT values are small away from the peak; this brings the block to O(1).
pub const GCC_SCALE: f64 = 10.0;
/// Width (lags) of the Gaussian applied along each GCC-PHAT vector. A PHAT
/// peak is one or two lags wide, so without it neighboring lags look unrelated
/// to the regressor and it cannot interpolate between delays seen in training.
pub const GCC_SMOOTH_SIGMA: f64 = 4.0;

/// Which input blocks a model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Modalities {
    pub mel: bool,
    pub gcc: bool,
    pub proprio: bool,
}

impl Modalities {
    pub const ALL: Modalities = Modalities { mel: true, gcc: true, proprio: true };
    pub const AUDIO: Modalities = Modalities { mel: true, gcc: true, proprio: false };

    pub fn mask(&self) -> [bool; 3] {
        [self.mel, self.gcc, self.proprio]
    }

    pub fn any(&self) -> bool {
        self.mel || self.gcc || self.proprio
    }
}

impl Default for Modalities {
    fn default() -> Self {
        Self::ALL
    }
}

impl fmt::Display for Modalities {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [(self.mel, "mel"), (self.gcc, "gcc"), (self.proprio, "proprio")]
            .iter()
            .filter(|(on, _)| *on)
            .map(|(_, n)| *n)
            .collect();
        write!(f, "{}", names.join(","))
    }
}

impl FromStr for Modalities {
    type Err = String;

    /// Comma- or plus-separated subset of `mel`, `gcc`, `proprio`; `audio` and
    /// `all` are shorthands.
    fn from_str(s: &str) -> Result<Self, String> {
        let mut m = Modalities { mel: false, gcc: false, proprio: false };
        for part in s.split([',', '+']).map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "mel" => m.mel = true,
                "gcc" => m.gcc = true,
                "proprio" => m.proprio = true,
                "audio" => {
                    m.mel = true;
                    m.gcc = true;
                }
                "all" => m = Modalities::ALL,
                other => return Err(format!("unknown modality '{other}'")),
            }
        }
        if !m.any() {
            return Err("at least one modality is required".into());
        }
        Ok(m)
    }
}

/// Denoise/trim settings shared by training and inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    /// Spectral gate profile; `None` disables background subtraction.
    pub gate: Option<NoiseProfile>,
    pub window_s: f64,
    /// Compute GCC-PHAT on the trimmed raw clip instead of the gated one.
    #[serde(default)]
    pub gcc_on_raw: bool,
}

impl Default for Pipeline {
    fn default() -> Self {
        Self { gate: None, window_s: 1.0, gcc_on_raw: false }
    }
}

impl Pipeline {
    pub fn prepare(&self, clip: &MultiChannelClip) -> Result<MultiChannelClip, LocalizeError> {
        Ok(denoise_and_trim(clip, self.gate.as_ref(), self.window_s)?)
    }

    /// The window GCC-PHAT is computed on; `prepared` is `prepare(clip)`.
    fn gcc_input(&self, clip: &MultiChannelClip, prepared: MultiChannelClip) -> Result<MultiChannelClip, LocalizeError> {
        if self.gcc_on_raw && self.gate.is_some() {
            Ok(denoise_and_trim(clip, None, self.window_s)?)
        } else {
            Ok(prepared)
        }
    }
}

/// Per-event features before normalization and pooling. The log-mel block is
/// kept at full time resolution so that training can augment it.
#[derive(Debug, Clone, PartialEq)]
pub struct EventFeatures {
    /// `6 x 50 x 341` log-mel, unnormalized.
    pub mel: Array3<f32>,
    pub gcc: Vec<f32>,
    pub proprio: Option<Vec<f32>>,
    pub label: Option<ContactPoint>,
}

/// Gate, trim, then compute log-mel, GCC-PHAT and the proprio summary.
pub fn extract(event: &EventRecord, pipeline: &Pipeline, analyzer: &MelAnalyzer) -> Result<EventFeatures, LocalizeError> {
    let clip = pipeline.prepare(&event.clip)?;
    let mel = analyzer.clip(&clip)?;
    if mel.frames() != MEL_FRAMES {
        return Err(LocalizeError::ShapeMismatch(format!("{} mel frames, expected {MEL_FRAMES}", mel.frames())));
    }
    let gcc_clip = pipeline.gcc_input(&event.clip, clip)?;
    let gcc = match gcc_phat_all(&gcc_clip, DEFAULT_MAX_LAG) {
        Ok(set) => gcc_block(&set),
        // a silent channel carries no phase information
        Err(crate::features::FeatureError::ZeroEnergy) => vec![0.0; GCC_DIM],
        Err(e) => return Err(e.into()),
    };
    Ok(EventFeatures {
        mel: mel.values.mapv(|v| v as f32),
        gcc,
        proprio: event.proprio.as_ref().map(proprio_summary),
        label: event.label,
    })
}

/// Smoothed and scaled GCC-PHAT vectors, pair-major. Zero padding at the ends
/// of the lag window.
pub fn gcc_block(set: &GccPhatSet) -> Vec<f32> {
    let r = (3.0 * GCC_SMOOTH_SIGMA).ceil() as usize;
    let kernel: Vec<f64> = (0..=2 * r)
        .map(|i| {
            let x = i as f64 - r as f64;
            (-x * x / (2.0 * GCC_SMOOTH_SIGMA * GCC_SMOOTH_SIGMA)).exp()
        })
        .collect();
    let norm: f64 = kernel.iter().sum();
    let mut out = Vec::with_capacity(set.vectors.len());
    for row in set.vectors.rows() {
        let n = row.len();
        for l in 0..n {
            let mut acc = 0.0;
            for (j, w) in kernel.iter().enumerate() {
                if let Some(t) = (l + j).checked_sub(r).filter(|&t| t < n) {
                    acc += w * row[t];
                }
            }
            out.push((acc / norm * GCC_SCALE) as f32);
        }
    }
    out
}

/// 9 evenly spaced samples of (position relative to the final pose, velocity,
/// speed), plus the peak speed: 64 values.
pub fn proprio_summary(trace: &ProprioTrace) -> Vec<f32> {
    let s = trace.samples();
    let (t0, t1) = (s[0].t, s[s.len() - 1].t);
    let end = s[s.len() - 1].position;
    let mut out = Vec::with_capacity(PROPRIO_DIM);
    for k in 0..PROPRIO_POINTS {
        let t = t0 + (t1 - t0) * k as f64 / (PROPRIO_POINTS - 1) as f64;
        let (p, v) = trace.interpolate(t);
        let rel = p - end;
        out.extend([rel.x / POS_SCALE, rel.y / POS_SCALE, rel.z / POS_SCALE].map(|x| x as f32));
        out.extend([v.x / VEL_SCALE, v.y / VEL_SCALE, v.z / VEL_SCALE, v.norm() / VEL_SCALE].map(|x| x as f32));
    }
    let peak = s.iter().map(|p| p.velocity.norm()).fold(0.0, f64::max);
    out.push((peak / VEL_SCALE) as f32);
    out
}

/// Network input: all three blocks always present, inactive ones zeroed.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub mel: Vec<f64>,
    pub gcc: Vec<f64>,
    pub proprio: Vec<f64>,
    pub mask: [bool; 3],
}

impl FeatureVector {
    pub fn zeros() -> Self {
        Self {
            mel: vec![0.0; MEL_DIM],
            gcc: vec![0.0; GCC_DIM],
            proprio: vec![0.0; PROPRIO_DIM],
            mask: [false; 3],
        }
    }
}

/// Fractional-overlap average pooling from `frames` to `bins`; each output is
/// the exact mean of the input over an interval of `frames / bins` frames, so
/// the overall mean is preserved.
#[derive(Debug, Clone)]
pub struct TimePooling {
    taps: Vec<Vec<(usize, f64)>>,
}

impl TimePooling {
    pub fn new(frames: usize, bins: usize) -> Self {
        let width = frames as f64 / bins as f64;
        let taps = (0..bins)
            .map(|b| {
                let (a, e) = (b as f64 * width, (b + 1) as f64 * width);
                let mut v = Vec::new();
                let mut t = a.floor() as usize;
                while (t as f64) < e && t < frames {
                    let overlap = (e.min(t as f64 + 1.0) - a.max(t as f64)).max(0.0);
                    if overlap > 0.0 {
                        v.push((t, overlap / width));
                    }
                    t += 1;
                }
                v
            })
            .collect();
        Self { taps }
    }

    pub fn bins(&self) -> usize {
        self.taps.len()
    }

    pub fn pool_into(&self, row: &[f64], out: &mut [f64]) {
        for (o, taps) in out.iter_mut().zip(&self.taps) {
            *o = taps.iter().map(|&(t, w)| w * row[t]).sum();
        }
    }
}

/// Normalizes, optionally augments, and pools the mel block into `out`
/// (`6 * 50 * 32` values, channel-major).
pub fn mel_block(mel: &Array3<f32>, stats: &NormStats, pooling: &TimePooling, draw: Option<&AugmentDraw>, out: &mut [f64]) {
    let (chans, mels, frames) = mel.dim();
    let bins = pooling.bins();
    let mut row = vec![0.0; frames];
    let shift = draw.map_or(0, |d| d.shift_frames.rem_euclid(frames as i64) as usize);
    for c in 0..chans {
        let (mu, sd) = (stats.per_channel_mean[c], stats.per_channel_std[c]);
        let ch = mel.index_axis(Axis(0), c);
        for m in 0..mels {
            let dst = &mut out[(c * mels + m) * bins..(c * mels + m + 1) * bins];
            if let Some(d) = draw {
                let (fs, fw) = d.freq_mask;
                if m >= fs && m < fs + fw {
                    dst.fill(0.0);
                    continue;
                }
            }
            let src = ch.index_axis(Axis(0), m);
            for (t, r) in row.iter_mut().enumerate() {
                *r = (src[(t + frames - shift) % frames] as f64 - mu) / sd;
            }
            if let Some(d) = draw {
                let (ts, tw) = d.time_mask;
                row[ts.min(frames)..(ts + tw).min(frames)].fill(0.0);
            }
            pooling.pool_into(&row, dst);
        }
    }
}

/// How a missing but requested modality is handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MissingPolicy {
    Error,
    /// Zero and mask the block, as if the flag were off.
    Zero,
}

/// Assembles the network input from extracted features.
pub fn assemble(
    f: &EventFeatures,
    stats: &NormStats,
    flags: Modalities,
    pooling: &TimePooling,
    draw: Option<&AugmentDraw>,
    missing: MissingPolicy,
) -> Result<FeatureVector, LocalizeError> {
    let mut fv = FeatureVector::zeros();
    if flags.mel {
        mel_block(&f.mel, stats, pooling, draw, &mut fv.mel);
        fv.mask[0] = true;
    }
    if flags.gcc {
        fv.gcc.iter_mut().zip(&f.gcc).for_each(|(d, &s)| *d = s as f64);
        fv.mask[1] = true;
    }
    if flags.proprio {
        match (&f.proprio, missing) {
            (Some(p), _) => {
                fv.proprio.iter_mut().zip(p).for_each(|(d, &s)| *d = s as f64);
                fv.mask[2] = true;
            }
            (None, MissingPolicy::Error) => return Err(LocalizeError::MissingModality("proprio".into())),
            (None, MissingPolicy::Zero) => {}
        }
    }
    Ok(fv)
}

/// One-shot feature construction for a single event.
pub fn build_features(event: &EventRecord, stats: &NormStats, flags: Modalities, pipeline: &Pipeline) -> Result<FeatureVector, LocalizeError> {
    let analyzer = MelAnalyzer::default();
    let f = extract(event, pipeline, &analyzer)?;
    assemble(&f, stats, flags, &TimePooling::new(MEL_FRAMES, POOLED_FRAMES), None, MissingPolicy::Error)
}

/// Regression target `(sin theta, cos theta, z / 0.10)`.
pub fn target(label: &ContactPoint) -> [f64; 3] {
    [label.theta().sin(), label.theta().cos(), label.z() / LABEL_HALF_RANGE_M]
}

/// Hop used for augmentation draws.
pub(crate) const AUG_HOP: usize = HOP;
