//! Denoising, peak-centered trimming and per-channel spectrogram normalization.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::Axis;
use realfft::num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio_io::{MultiChannelClip, NUM_CHANNELS, SAMPLE_RATE};
use crate::features::spectral::{forward_plan, hann, inverse_plan, stft, MelSpectrogram};
use crate::features::{FeatureError, HOP, N_FFT};

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("reference too short: {0:.3} s (need >= 0.5 s)")]
    TooShort(f64),
    #[error("clip too short: {have} samples, window needs {need}")]
    ClipTooShort { have: usize, need: usize },
    #[error("noise profile geometry does not match the gate: {0}")]
    GeometryMismatch(String),
    #[error("empty spectrogram collection")]
    EmptyCollection,
    #[error("channel {0} has zero variance")]
    DegenerateStd(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("sidecar {path}: {reason}")]
    Sidecar { path: String, reason: String },
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

/// Gate defaults: k_sigma 1.5, -30 dB floor, 3-bin smoothing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub k_sigma: f64,
    pub attenuation_db: f64,
    pub smoothing_bins: usize,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            k_sigma: 1.5,
            attenuation_db: -30.0,
            smoothing_bins: 3,
        }
    }
}

/// Per-channel, per-bin magnitude thresholds estimated from a collision-free
/// reference recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseProfile {
    /// `6 x (n_fft/2 + 1)`.
    pub per_channel_threshold: Vec<Vec<f64>>,
    pub gate_attenuation_db: f64,
    pub smoothing_bins: usize,
    pub n_fft: usize,
    pub hop: usize,
}

impl NoiseProfile {
    /// A profile that lets everything through.
    pub fn transparent() -> Self {
        Self {
            per_channel_threshold: vec![vec![0.0; N_FFT / 2 + 1]; NUM_CHANNELS],
            gate_attenuation_db: GateConfig::default().attenuation_db,
            smoothing_bins: GateConfig::default().smoothing_bins,
            n_fft: N_FFT,
            hop: HOP,
        }
    }

    fn validate(&self) -> Result<(), PreprocessError> {
        let bins = self.n_fft / 2 + 1;
        if self.per_channel_threshold.len() != NUM_CHANNELS {
            return Err(PreprocessError::GeometryMismatch(format!(
                "{} channels",
                self.per_channel_threshold.len()
            )));
        }
        for t in &self.per_channel_threshold {
            if t.len() != bins {
                return Err(PreprocessError::GeometryMismatch(format!(
                    "{} bins, expected {bins}",
                    t.len()
                )));
            }
            if t.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(PreprocessError::GeometryMismatch(
                    "thresholds must be finite and non-negative".into(),
                ));
            }
        }
        Ok(())
    }
}

/// `threshold[c][f] = mean_t |X| + k_sigma * std_t |X|` over the reference.
pub fn build_noise_profile(reference: &MultiChannelClip, cfg: &GateConfig) -> Result<NoiseProfile, PreprocessError> {
    if reference.duration() < 0.5 {
        return Err(PreprocessError::TooShort(reference.duration()));
    }
    let mut thresholds = Vec::with_capacity(NUM_CHANNELS);
    for c in 0..NUM_CHANNELS {
        let spec = stft(&reference.channel_f64(c), N_FFT, HOP)?;
        let frames = spec.shape()[1] as f64;
        let row: Vec<f64> = spec
            .outer_iter()
            .map(|bin| {
                let mean = bin.iter().map(|z| z.norm()).sum::<f64>() / frames;
                let var = bin.iter().map(|z| (z.norm() - mean).powi(2)).sum::<f64>() / frames;
                mean + cfg.k_sigma * var.sqrt()
            })
            .collect();
        thresholds.push(row);
    }
    Ok(NoiseProfile {
        per_channel_threshold: thresholds,
        gate_attenuation_db: cfg.attenuation_db,
        smoothing_bins: cfg.smoothing_bins,
        n_fft: N_FFT,
        hop: HOP,
    })
}

/// Raised-cosine transition from 0 at the threshold to 1 at twice the threshold.
fn soft_mask(mag: f64, thr: f64) -> f64 {
    if mag >= 2.0 * thr {
        1.0
    } else if mag <= thr {
        0.0
    } else {
        0.5 - 0.5 * (PI * (mag - thr) / thr).cos()
    }
}

fn gate_channel(x: &[f64], thr: &[f64], floor: f64, smoothing: usize, n_fft: usize, hop: usize) -> Vec<f64> {
    let n = x.len();
    // pad so that every original sample is covered by a full set of frames
    let lead = n_fft;
    let mut total = n + 2 * n_fft;
    let rem = (total - n_fft) % hop;
    if rem != 0 {
        total += hop - rem;
    }
    let mut padded = vec![0.0; total];
    padded[lead..lead + n].copy_from_slice(x);

    let win = hann(n_fft);
    let fwd = forward_plan(n_fft);
    let inv = inverse_plan(n_fft);
    let mut buf = fwd.make_input_vec();
    let mut spec = fwd.make_output_vec();
    let mut out_frame = inv.make_output_vec();
    let bins = spec.len();
    let mut mask = vec![0.0; bins];
    let mut smooth = vec![0.0; bins];
    let mut y = vec![0.0; total];
    let mut wsum = vec![0.0; total];
    let half = smoothing / 2;

    let frames = 1 + (total - n_fft) / hop;
    for t in 0..frames {
        let s = t * hop;
        for i in 0..n_fft {
            buf[i] = padded[s + i] * win[i];
        }
        fwd.process(&mut buf, &mut spec).expect("fft buffer sizes");
        for k in 0..bins {
            mask[k] = soft_mask(spec[k].norm(), thr[k]);
        }
        if smoothing > 1 {
            for k in 0..bins {
                let lo = k.saturating_sub(half);
                let hi = (k + smoothing - half).min(bins);
                smooth[k] = mask[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
            }
        } else {
            smooth.copy_from_slice(&mask);
        }
        for k in 0..bins {
            let g = floor + (1.0 - floor) * smooth[k];
            spec[k] *= g;
        }
        spec[0].im = 0.0;
        spec[bins - 1].im = 0.0;
        inv.process(&mut spec, &mut out_frame).expect("fft buffer sizes");
        for i in 0..n_fft {
            y[s + i] += out_frame[i] / n_fft as f64 * win[i];
            wsum[s + i] += win[i] * win[i];
        }
    }
    (0..n)
        .map(|i| {
            let w = wsum[lead + i];
            if w > 1e-12 {
                y[lead + i] / w
            } else {
                0.0
            }
        })
        .collect()
}

/// Attenuates time-frequency bins below the profile thresholds and resynthesizes
/// by weighted overlap-add. Output length equals input length.
pub fn spectral_gate(clip: &MultiChannelClip, profile: &NoiseProfile) -> Result<MultiChannelClip, PreprocessError> {
    profile.validate()?;
    if profile.n_fft != N_FFT || profile.hop != HOP {
        return Err(PreprocessError::GeometryMismatch(format!(
            "profile uses n_fft {} hop {}, gate uses {N_FFT}/{HOP}",
            profile.n_fft, profile.hop
        )));
    }
    let floor = 10f64.powf(profile.gate_attenuation_db / 20.0);
    let channels: Vec<Vec<f64>> = (0..NUM_CHANNELS)
        .map(|c| {
            gate_channel(
                &clip.channel_f64(c),
                &profile.per_channel_threshold[c],
                floor,
                profile.smoothing_bins,
                profile.n_fft,
                profile.hop,
            )
        })
        .collect();
    Ok(MultiChannelClip::from_f64(channels).expect("gated clip keeps invariants"))
}

/// Sample index of the largest absolute amplitude across all channels
/// (first occurrence).
pub fn peak_index(clip: &MultiChannelClip) -> usize {
    let mut best = (0usize, -1.0f32);
    for c in clip.channels() {
        for (i, &v) in c.iter().enumerate() {
            if v.abs() > best.1 || (v.abs() == best.1 && i < best.0) {
                best = (i, v.abs());
            }
        }
    }
    best.0
}

fn window_len(window_s: f64) -> usize {
    (window_s * SAMPLE_RATE as f64).round() as usize
}

/// Slice of `window` samples whose center sample (`window / 2`) is `center`,
/// zero-padded where it runs past either end. Same bounds on all channels.
pub fn trim_around(clip: &MultiChannelClip, center: usize, window: usize) -> MultiChannelClip {
    let start = center as isize - (window / 2) as isize;
    let n = clip.len() as isize;
    let chans = clip
        .channels()
        .iter()
        .map(|c| {
            (0..window as isize)
                .map(|i| {
                    let k = start + i;
                    if k >= 0 && k < n {
                        c[k as usize]
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    MultiChannelClip::new(chans).expect("trimmed clip keeps invariants")
}

/// Window of `window_s` seconds centered on the global peak.
pub fn trim_peak_window(clip: &MultiChannelClip, window_s: f64) -> Result<MultiChannelClip, PreprocessError> {
    let need = window_len(window_s);
    if need == 0 || clip.len() < need {
        return Err(PreprocessError::ClipTooShort {
            have: clip.len(),
            need,
        });
    }
    Ok(trim_around(clip, peak_index(clip), need))
}

/// Gate (optional) then trim, locating the peak on the raw signal.
pub fn denoise_and_trim(
    raw: &MultiChannelClip,
    profile: Option<&NoiseProfile>,
    window_s: f64,
) -> Result<MultiChannelClip, PreprocessError> {
    let need = window_len(window_s);
    if need == 0 || raw.len() < need {
        return Err(PreprocessError::ClipTooShort {
            have: raw.len(),
            need,
        });
    }
    let center = peak_index(raw);
    let Some(p) = profile else {
        return Ok(trim_around(raw, center, need));
    };
    // Gate only the neighborhood of the window. The slice starts on the frame
    // grid and keeps a full frame of margin, so every kept sample sees exactly
    // the frames it would see when gating the whole clip.
    let start = center as isize - (need / 2) as isize;
    let lo = (start - N_FFT as isize).max(0) as usize / HOP * HOP;
    let hi = ((start + need as isize + N_FFT as isize).max(0) as usize).min(raw.len());
    let part = MultiChannelClip::new(raw.channels().iter().map(|c| c[lo..hi].to_vec()).collect()).expect("non-empty slice");
    let gated = spectral_gate(&part, p)?;
    Ok(trim_around(&gated, center - lo, need))
}

/// How spectrogram statistics are pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormMode {
    /// One mean/std per channel over the whole training corpus.
    #[default]
    Corpus,
    /// Each spectrogram normalized by its own per-channel statistics.
    PerTrial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub per_channel_mean: Vec<f64>,
    pub per_channel_std: Vec<f64>,
    #[serde(default)]
    pub mode: NormMode,
}

/// Population mean and standard deviation per channel, pooled over trials,
/// mel bins and frames.
pub fn compute_norm_stats(specs: &[MelSpectrogram]) -> Result<NormStats, PreprocessError> {
    let Some(first) = specs.first() else {
        return Err(PreprocessError::EmptyCollection);
    };
    let channels = first.channels();
    if specs.iter().any(|s| s.channels() != channels) {
        return Err(PreprocessError::ShapeMismatch("channel counts differ".into()));
    }
    let mut mean = vec![0.0; channels];
    let mut std = vec![0.0; channels];
    for c in 0..channels {
        let mut count = 0usize;
        let mut sum = 0.0;
        for s in specs {
            let ch = s.values.index_axis(Axis(0), c);
            sum += ch.sum();
            count += ch.len();
        }
        let m = sum / count as f64;
        let mut ss = 0.0;
        for s in specs {
            ss += s
                .values
                .index_axis(Axis(0), c)
                .iter()
                .map(|v| (v - m) * (v - m))
                .sum::<f64>();
        }
        let sd = (ss / count as f64).sqrt();
        if !(sd > 1e-12) {
            return Err(PreprocessError::DegenerateStd(c));
        }
        mean[c] = m;
        std[c] = sd;
    }
    Ok(NormStats {
        per_channel_mean: mean,
        per_channel_std: std,
        mode: NormMode::Corpus,
    })
}

/// `(spec[c] - mean[c]) / std[c]`, each channel on its own.
pub fn normalize(spec: &MelSpectrogram, stats: &NormStats) -> Result<MelSpectrogram, PreprocessError> {
    if stats.mode == NormMode::PerTrial {
        let own = compute_norm_stats(std::slice::from_ref(spec))?;
        return normalize(spec, &own);
    }
    if stats.per_channel_mean.len() != spec.channels() || stats.per_channel_std.len() != spec.channels() {
        return Err(PreprocessError::ShapeMismatch(format!(
            "stats for {} channels, spectrogram has {}",
            stats.per_channel_mean.len(),
            spec.channels()
        )));
    }
    let mut out = spec.clone();
    for (c, mut ch) in out.values.outer_iter_mut().enumerate() {
        let (m, s) = (stats.per_channel_mean[c], stats.per_channel_std[c]);
        ch.mapv_inplace(|v| (v - m) / s);
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct Sidecar<T> {
    version: u32,
    kind: String,
    body: T,
}

pub const SIDECAR_VERSION: u32 = 1;

/// Writes a versioned JSON sidecar (`kind` tags the payload type).
pub fn save_sidecar<T: Serialize>(path: &Path, kind: &str, body: &T) -> Result<(), PreprocessError> {
    let err = |reason: String| PreprocessError::Sidecar {
        path: path.display().to_string(),
        reason,
    };
    let doc = Sidecar {
        version: SIDECAR_VERSION,
        kind: kind.to_string(),
        body,
    };
    let text = serde_json::to_string_pretty(&doc).map_err(|e| err(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| err(e.to_string()))
}

pub fn load_sidecar<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T, PreprocessError> {
    let err = |reason: String| PreprocessError::Sidecar {
        path: path.display().to_string(),
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    let doc: Sidecar<T> = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
    if doc.version != SIDECAR_VERSION {
        return Err(err(format!("unsupported version {}", doc.version)));
    }
    if doc.kind != kind {
        return Err(err(format!("expected {kind}, found {}", doc.kind)));
    }
    Ok(doc.body)
}

#[allow(dead_code)]
fn _assert_complex(_: Complex64) {}
