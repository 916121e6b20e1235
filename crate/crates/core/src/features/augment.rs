//! Training-time augmentation: common time shift plus time/frequency masks.

use ndarray::{Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spectral::MelSpectrogram;
use crate::audio_io::{MultiChannelClip, SAMPLE_RATE};

pub const MAX_SHIFT_S: f64 = 0.1;
pub const MAX_TIME_MASK: usize = 20;
pub const MAX_FREQ_MASK: usize = 6;

/// One random draw of augmentation parameters. The shift is a whole number of
/// STFT hops so that the waveform and spectrogram stay frame-aligned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentDraw {
    pub shift_frames: i64,
    pub time_mask: (usize, usize),
    pub freq_mask: (usize, usize),
}

impl AugmentDraw {
    pub fn sample<R: Rng>(rng: &mut R, frames: usize, n_mels: usize, hop: usize) -> Self {
        let max_shift = (MAX_SHIFT_S * SAMPLE_RATE as f64 / hop as f64).floor() as i64;
        let shift_frames = rng.random_range(-max_shift..=max_shift);
        let tw = rng.random_range(0..=MAX_TIME_MASK.min(frames));
        let ts = rng.random_range(0..=frames - tw);
        let fw = rng.random_range(0..=MAX_FREQ_MASK.min(n_mels));
        let fs = rng.random_range(0..=n_mels - fw);
        Self {
            shift_frames,
            time_mask: (ts, tw),
            freq_mask: (fs, fw),
        }
    }

    /// Rolls frames and zeroes the masked blocks on every channel.
    pub fn apply_mel(&self, values: &mut Array3<f64>) {
        let frames = values.shape()[2];
        if frames == 0 {
            return;
        }
        let s = self.shift_frames.rem_euclid(frames as i64) as usize;
        if s != 0 {
            for mut lane in values.lanes_mut(Axis(2)) {
                let v: Vec<f64> = lane.iter().copied().collect();
                for (t, x) in lane.iter_mut().enumerate() {
                    *x = v[(t + frames - s) % frames];
                }
            }
        }
        let (ts, tw) = self.time_mask;
        let (fs, fw) = self.freq_mask;
        for mut ch in values.outer_iter_mut() {
            for m in 0..ch.shape()[0] {
                for t in 0..frames {
                    if (t >= ts && t < ts + tw) || (m >= fs && m < fs + fw) {
                        ch[[m, t]] = 0.0;
                    }
                }
            }
        }
    }

    /// Circular shift of all six channels by the same number of samples.
    pub fn apply_clip(&self, clip: &MultiChannelClip, hop: usize) -> MultiChannelClip {
        let n = clip.len();
        let s = (self.shift_frames * hop as i64).rem_euclid(n as i64) as usize;
        let chans = clip
            .channels()
            .iter()
            .map(|c| (0..n).map(|i| c[(i + n - s) % n]).collect())
            .collect();
        MultiChannelClip::new(chans).expect("shifted clip keeps invariants")
    }
}

/// Applies a seeded augmentation to a spectrogram/clip pair.
pub fn augment(spec: &MelSpectrogram, clip: &MultiChannelClip, seed: u64) -> (MelSpectrogram, MultiChannelClip) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = AugmentDraw::sample(&mut rng, spec.frames(), spec.n_mels(), spec.hop);
    let mut values = spec.values.clone();
    draw.apply_mel(&mut values);
    (
        MelSpectrogram {
            values,
            n_fft: spec.n_fft,
            hop: spec.hop,
        },
        draw.apply_clip(clip, spec.hop),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::gcc::{gcc_phat_all, tdoa_estimate};
    use crate::features::spectral::mel_spectrogram;

    fn test_clip() -> MultiChannelClip {
        let mut state = 99u64;
        let src: Vec<f32> = (0..46_000)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
                (state >> 40) as f32 / (1u64 << 24) as f32 - 0.5
            })
            .collect();
        let delays = [0usize, 4, 9, 17, 25, 31];
        MultiChannelClip::new(
            delays
                .iter()
                .map(|&d| src[40 - d..40 - d + 44_100].to_vec())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let clip = test_clip();
        let spec = mel_spectrogram(&clip).unwrap();
        let a = augment(&spec, &clip, 5);
        let b = augment(&spec, &clip, 5);
        assert_eq!(a, b);
    }

    #[test]
    fn shift_preserves_gcc_lags() {
        let clip = test_clip();
        let spec = mel_spectrogram(&clip).unwrap();
        let before = gcc_phat_all(&clip, 64).unwrap();
        for seed in 0..4 {
            let (_, shifted) = augment(&spec, &clip, seed);
            let after = gcc_phat_all(&shifted, 64).unwrap();
            for p in 0..15 {
                let a = tdoa_estimate(before.vector(p).as_slice().unwrap()).lag;
                let b = tdoa_estimate(after.vector(p).as_slice().unwrap()).lag;
                assert!((a - b).abs() < 0.25, "pair {p}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn mask_fraction_bounded() {
        let clip = test_clip();
        let spec = mel_spectrogram(&clip).unwrap();
        let bound = (20.0 * 50.0 + 6.0 * 341.0) / (50.0 * 341.0);
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut draw = AugmentDraw::sample(&mut rng, 341, 50, 128);
            draw.shift_frames = 0;
            let mut v = spec.values.clone();
            draw.apply_mel(&mut v);
            for c in 0..6 {
                let changed = v
                    .index_axis(Axis(0), c)
                    .iter()
                    .zip(spec.values.index_axis(Axis(0), c).iter())
                    .filter(|(a, b)| a != b)
                    .count();
                assert!(changed as f64 / (50.0 * 341.0) <= bound);
            }
        }
    }
}
