//! STFT and log-mel analysis.

use std::cell::RefCell;
use std::sync::Arc;

use ndarray::{Array2, Array3};
use realfft::num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

use super::FeatureError;
use crate::audio_io::{MultiChannelClip, NUM_CHANNELS, SAMPLE_RATE};

pub const N_FFT: usize = 512;
pub const HOP: usize = 128;
pub const N_MELS: usize = 50;
pub const MEL_FLOOR: f64 = 1e-10;

thread_local! {
    static PLANNER: RefCell<RealFftPlanner<f64>> = RefCell::new(RealFftPlanner::new());
}

pub(crate) fn forward_plan(n: usize) -> Arc<dyn RealToComplex<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n))
}

pub(crate) fn inverse_plan(n: usize) -> Arc<dyn ComplexToReal<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n))
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Number of frames produced by [`stft`] without padding.
pub fn frame_count(samples: usize, n_fft: usize, hop: usize) -> usize {
    if samples < n_fft {
        0
    } else {
        1 + (samples - n_fft) / hop
    }
}

/// Hann-windowed STFT without centering. Returns `(n_fft/2 + 1) x frames`;
/// frame `t` covers samples `[t*hop, t*hop + n_fft)`.
pub fn stft(samples: &[f64], n_fft: usize, hop: usize) -> Result<Array2<Complex64>, FeatureError> {
    if n_fft < 2 || n_fft % 2 != 0 || hop == 0 {
        return Err(FeatureError::InvalidConfig(format!(
            "n_fft {n_fft} must be even and >= 2, hop {hop} must be positive"
        )));
    }
    if samples.len() < n_fft {
        return Err(FeatureError::TooShort {
            len: samples.len(),
            need: n_fft,
        });
    }
    let frames = frame_count(samples.len(), n_fft, hop);
    let bins = n_fft / 2 + 1;
    let win = hann(n_fft);
    let plan = forward_plan(n_fft);
    let mut buf = plan.make_input_vec();
    let mut spec = plan.make_output_vec();
    let mut scratch = plan.make_scratch_vec();
    let mut out = Array2::<Complex64>::zeros((bins, frames));
    for t in 0..frames {
        let frame = &samples[t * hop..t * hop + n_fft];
        for ((b, &x), &w) in buf.iter_mut().zip(frame).zip(&win) {
            *b = x * w;
        }
        plan.process_with_scratch(&mut buf, &mut spec, &mut scratch)
            .expect("fft buffer sizes");
        for (f, v) in spec.iter().enumerate() {
            out[[f, t]] = *v;
        }
    }
    Ok(out)
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters equally spaced on the mel scale from 0 Hz to Nyquist.
/// Shape `n_mels x (n_fft/2 + 1)`, unit peak height.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: f64) -> Result<Array2<f64>, FeatureError> {
    if n_mels == 0 || n_fft < 2 || !(sample_rate > 0.0) {
        return Err(FeatureError::InvalidConfig(format!(
            "n_mels {n_mels}, n_fft {n_fft}, rate {sample_rate}"
        )));
    }
    let bins = n_fft / 2 + 1;
    let top = hz_to_mel(sample_rate / 2.0);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate / n_fft as f64;
    let mut fb = Array2::zeros((n_mels, bins));
    for m in 0..n_mels {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..bins {
            let f = k as f64 * bin_hz;
            let w = if f > lo && f <= mid {
                (f - lo) / (mid - lo)
            } else if f > mid && f < hi {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
            fb[[m, k]] = w;
        }
    }
    Ok(fb)
}

/// Center frequency of each mel filter in Hz.
pub fn mel_centers(n_mels: usize, sample_rate: f64) -> Vec<f64> {
    let top = hz_to_mel(sample_rate / 2.0);
    (1..=n_mels)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect()
}

/// Per-channel log-power mel spectrogram, `6 x n_mels x frames`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: Array3<f64>,
    pub n_fft: usize,
    pub hop: usize,
}

impl MelSpectrogram {
    pub fn channels(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn n_mels(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn frames(&self) -> usize {
        self.values.shape()[2]
    }
}

/// Reusable mel analysis: caches the filterbank as sparse row ranges.
#[derive(Debug, Clone)]
pub struct MelAnalyzer {
    rows: Vec<(usize, Vec<f64>)>,
    n_fft: usize,
    hop: usize,
}

impl Default for MelAnalyzer {
    fn default() -> Self {
        Self::new(N_MELS, N_FFT, HOP).expect("default mel config is valid")
    }
}

impl MelAnalyzer {
    pub fn new(n_mels: usize, n_fft: usize, hop: usize) -> Result<Self, FeatureError> {
        let fb = mel_filterbank(n_mels, n_fft, SAMPLE_RATE as f64)?;
        let rows = fb
            .outer_iter()
            .map(|row| {
                let first = row.iter().position(|&w| w > 0.0).unwrap_or(0);
                let last = row.iter().rposition(|&w| w > 0.0).unwrap_or(0);
                (first, row.iter().skip(first).take(last + 1 - first).copied().collect())
            })
            .collect();
        Ok(Self { rows, n_fft, hop })
    }

    /// `log10(filterbank . |STFT|^2 + 1e-10)` for one channel, `n_mels x frames`.
    pub fn channel(&self, samples: &[f64]) -> Result<Array2<f64>, FeatureError> {
        let spec = stft(samples, self.n_fft, self.hop)?;
        let frames = spec.shape()[1];
        let power = spec.mapv(|c| c.norm_sqr());
        let mut out = Array2::zeros((self.rows.len(), frames));
        for (m, (first, w)) in self.rows.iter().enumerate() {
            for t in 0..frames {
                let mut acc = 0.0;
                for (j, &wj) in w.iter().enumerate() {
                    acc += wj * power[[first + j, t]];
                }
                out[[m, t]] = (acc + MEL_FLOOR).log10();
            }
        }
        Ok(out)
    }

    pub fn clip(&self, clip: &MultiChannelClip) -> Result<MelSpectrogram, FeatureError> {
        let frames = frame_count(clip.len(), self.n_fft, self.hop);
        if frames == 0 {
            return Err(FeatureError::TooShort {
                len: clip.len(),
                need: self.n_fft,
            });
        }
        let mut values = Array3::zeros((NUM_CHANNELS, self.rows.len(), frames));
        for c in 0..NUM_CHANNELS {
            let ch = self.channel(&clip.channel_f64(c))?;
            values.index_axis_mut(ndarray::Axis(0), c).assign(&ch);
        }
        Ok(MelSpectrogram {
            values,
            n_fft: self.n_fft,
            hop: self.hop,
        })
    }
}

/// Mel spectrogram with the default 512/128/50 analysis.
pub fn mel_spectrogram(clip: &MultiChannelClip) -> Result<MelSpectrogram, FeatureError> {
    MelAnalyzer::default().clip(clip)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn frame_count_formula() {
        assert_eq!(frame_count(44_100, 512, 128), 341);
        for n in [512usize, 513, 640, 1000, 4096, 88_200] {
            let s = vec![0.0; n];
            assert_eq!(stft(&s, 512, 128).unwrap().shape()[1], 1 + (n - 512) / 128);
        }
        assert!(matches!(
            stft(&[0.0; 100], 512, 128),
            Err(FeatureError::TooShort { .. })
        ));
    }

    #[test]
    fn zero_in_zero_out() {
        let s = stft(&vec![0.0; 2048], 512, 128).unwrap();
        assert!(s.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn bin_centered_cosine_concentrates() {
        let k = 23;
        let f = k as f64 * 44_100.0 / 512.0;
        let x: Vec<f64> = (0..4096)
            .map(|i| (2.0 * PI * f * i as f64 / 44_100.0).cos())
            .collect();
        let s = stft(&x, 512, 128).unwrap();
        // direct DFT oracle on the first windowed frame
        let w = hann(512);
        let mut direct = vec![0.0; 257];
        for (b, d) in direct.iter_mut().enumerate() {
            let (mut re, mut im) = (0.0, 0.0);
            for n in 0..512 {
                let a = -2.0 * PI * (b * n) as f64 / 512.0;
                re += x[n] * w[n] * a.cos();
                im += x[n] * w[n] * a.sin();
            }
            *d = re * re + im * im;
            assert!((s[[b, 0]].norm_sqr() - *d).abs() < 1e-6 * (1.0 + *d));
        }
        let total: f64 = direct.iter().sum();
        // a Hann window spreads a bin-centered tone over k-1..=k+1
        let main = direct[k - 1] + direct[k] + direct[k + 1];
        assert!(main / total >= 0.95);
        let peak = direct
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(peak, k);
    }

    #[test]
    fn filterbank_shape_and_coverage() {
        let fb = mel_filterbank(50, 512, 44_100.0).unwrap();
        assert_eq!(fb.shape(), &[50, 257]);
        assert!(fb.iter().all(|&w| w >= 0.0));
        for row in fb.outer_iter() {
            assert!(row.sum() > 0.0);
        }
        let centers = mel_centers(50, 44_100.0);
        assert!(centers.windows(2).all(|w| w[1] > w[0]));
        let bin_hz = 44_100.0 / 512.0;
        for k in 0..257 {
            let f = k as f64 * bin_hz;
            if f >= centers[0] && f <= centers[49] {
                assert!(fb.column(k).iter().any(|&w| w > 0.0), "bin {k} uncovered");
            }
        }
        assert!(mel_filterbank(0, 512, 44_100.0).is_err());
    }

    #[test]
    fn mel_scale_reference() {
        assert!((hz_to_mel(1000.0) - 999.99).abs() < 0.01);
        assert!((mel_to_hz(hz_to_mel(3210.0)) - 3210.0).abs() < 1e-9);
    }

    #[test]
    fn mel_shape_silence_and_gain() {
        let mut chans = vec![vec![0.0f32; 44_100]; 6];
        let silent = mel_spectrogram(&MultiChannelClip::new(chans.clone()).unwrap()).unwrap();
        assert_eq!(silent.values.shape(), &[6, 50, 341]);
        assert!(silent.values.iter().all(|&v| v == MEL_FLOOR.log10()));

        let mut state = 12345u64;
        for (c, ch) in chans.iter_mut().enumerate() {
            for (i, v) in ch.iter_mut().enumerate() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let noise = (state >> 40) as f32 / (1u64 << 24) as f32 - 0.5;
                *v = ((i * (c + 3)) as f32 * 0.01).sin() + 0.2 * noise;
            }
        }
        let base = mel_spectrogram(&MultiChannelClip::new(chans.clone()).unwrap()).unwrap();
        for v in chans[0].iter_mut() {
            *v *= 2.0;
        }
        let louder = mel_spectrogram(&MultiChannelClip::new(chans).unwrap()).unwrap();
        let diff = &louder.values - &base.values;
        for m in 0..50 {
            for t in 0..341 {
                // the epsilon floor is negligible at these energies
                assert!((diff[[0, m, t]] - 4f64.log10()).abs() < 1e-6);
                for c in 1..6 {
                    assert_eq!(diff[[c, m, t]], 0.0);
                }
            }
        }
    }
}
