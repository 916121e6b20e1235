//! Phase-transform generalized cross-correlation between sensor pairs.
//!
//! Lag convention: a positive lag `d` means channel `j` lags channel `i` by
//! `d` samples, i.e. the vector holds `Re IFFT[conj(X_i) X_j / |X_i X_j|](d)`.

use ndarray::Array2;
use realfft::num_complex::Complex64;

use super::spectral::{forward_plan, inverse_plan};
use super::FeatureError;
use crate::audio_io::{MultiChannelClip, NUM_CHANNELS};

pub const DEFAULT_MAX_LAG: usize = 64;
/// Cross-spectrum magnitudes below this get zero weight.
pub const PHAT_FLOOR: f64 = 1e-12;

/// The 15 unordered sensor pairs in lexicographic order.
pub fn sensor_pairs() -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(15);
    for i in 0..NUM_CHANNELS {
        for j in i + 1..NUM_CHANNELS {
            out.push((i, j));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct GccPhatSet {
    pub pairs: Vec<(usize, usize)>,
    /// `15 x (2 * max_lag + 1)`, column `max_lag + d` holds lag `d`.
    pub vectors: Array2<f64>,
    pub max_lag: usize,
}

impl GccPhatSet {
    pub fn vector(&self, pair: usize) -> ndarray::ArrayView1<'_, f64> {
        self.vectors.row(pair)
    }

    /// Index of `(i, j)` (either order) in [`Self::pairs`].
    pub fn pair_index(&self, i: usize, j: usize) -> Option<usize> {
        let key = (i.min(j), i.max(j));
        self.pairs.iter().position(|&p| p == key)
    }
}

/// Long enough that lags up to `max_lag` never wrap around.
fn fft_len(n: usize, max_lag: usize) -> usize {
    (n + max_lag + 1).next_power_of_two()
}

fn spectrum(x: &[f64], n_fft: usize) -> Vec<Complex64> {
    let plan = forward_plan(n_fft);
    let mut buf = plan.make_input_vec();
    buf[..x.len()].copy_from_slice(x);
    let mut out = plan.make_output_vec();
    plan.process(&mut buf, &mut out).expect("fft buffer sizes");
    out
}

fn phat_from_spectra(xi: &[Complex64], xj: &[Complex64], n_fft: usize, max_lag: usize) -> Vec<f64> {
    let plan = inverse_plan(n_fft);
    let mut cross = plan.make_input_vec();
    for ((c, a), b) in cross.iter_mut().zip(xi).zip(xj) {
        let g = a.conj() * b;
        let mag = g.norm();
        *c = if mag < PHAT_FLOOR {
            Complex64::new(0.0, 0.0)
        } else {
            g / mag
        };
    }
    // the real inverse transform ignores imaginary parts at DC and Nyquist
    let last = cross.len() - 1;
    cross[0].im = 0.0;
    cross[last].im = 0.0;
    let mut time = plan.make_output_vec();
    plan.process(&mut cross, &mut time).expect("fft buffer sizes");
    let scale = 1.0 / n_fft as f64;
    let max_lag = max_lag.min(n_fft / 2 - 1);
    (0..=2 * max_lag)
        .map(|k| {
            let d = k as isize - max_lag as isize;
            let idx = if d >= 0 {
                d as usize
            } else {
                (n_fft as isize + d) as usize
            };
            time[idx] * scale
        })
        .collect()
}

fn check_energy(x: &[f64]) -> Result<(), FeatureError> {
    if x.iter().all(|&v| v == 0.0) {
        Err(FeatureError::ZeroEnergy)
    } else {
        Ok(())
    }
}

/// GCC-PHAT of one pair over lags `[-max_lag, max_lag]`, computed on the
/// zero-padded transform so that no circular aliasing occurs.
pub fn gcc_phat_pair(xi: &[f64], xj: &[f64], max_lag: usize) -> Result<Vec<f64>, FeatureError> {
    if xi.len() != xj.len() {
        return Err(FeatureError::LengthMismatch(xi.len(), xj.len()));
    }
    if xi.is_empty() {
        return Err(FeatureError::TooShort { len: 0, need: 1 });
    }
    check_energy(xi)?;
    check_energy(xj)?;
    let n_fft = fft_len(xi.len(), max_lag);
    let a = spectrum(xi, n_fft);
    let b = spectrum(xj, n_fft);
    Ok(phat_from_spectra(&a, &b, n_fft, max_lag))
}

/// GCC-PHAT for all 15 pairs; each channel is transformed once.
pub fn gcc_phat_all(clip: &MultiChannelClip, max_lag: usize) -> Result<GccPhatSet, FeatureError> {
    let chans: Vec<Vec<f64>> = (0..NUM_CHANNELS).map(|c| clip.channel_f64(c)).collect();
    for c in &chans {
        check_energy(c)?;
    }
    let n_fft = fft_len(clip.len(), max_lag);
    let spectra: Vec<Vec<Complex64>> = chans.iter().map(|c| spectrum(c, n_fft)).collect();
    let pairs = sensor_pairs();
    let width = 2 * max_lag + 1;
    let mut vectors = Array2::zeros((pairs.len(), width));
    for (p, &(i, j)) in pairs.iter().enumerate() {
        let v = phat_from_spectra(&spectra[i], &spectra[j], n_fft, max_lag);
        for (k, x) in v.into_iter().enumerate() {
            vectors[[p, k]] = x;
        }
    }
    Ok(GccPhatSet {
        pairs,
        vectors,
        max_lag,
    })
}

/// Peak of a correlation vector with sub-sample refinement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdoaEstimate {
    /// Signed lag in samples.
    pub lag: f64,
    /// Peak height over the mean absolute value of the vector.
    pub prominence: f64,
    pub low_confidence: bool,
}

/// Required peak-to-mean ratio for a confident estimate.
pub const MIN_PROMINENCE: f64 = 2.0;

/// Argmax with parabolic interpolation over the three samples around the
/// peak. Ties go to the lag closest to zero, so a flat vector yields 0.
pub fn tdoa_estimate(v: &[f64]) -> TdoaEstimate {
    assert!(!v.is_empty(), "tdoa_estimate needs a non-empty vector");
    let center = (v.len() - 1) / 2;
    let mut best = 0usize;
    for (k, &x) in v.iter().enumerate() {
        let better = x > v[best]
            || (x == v[best] && k.abs_diff(center) < best.abs_diff(center));
        if better {
            best = k;
        }
    }
    let mut delta = 0.0;
    if best > 0 && best + 1 < v.len() {
        let (a, b, c) = (v[best - 1], v[best], v[best + 1]);
        let denom = a - 2.0 * b + c;
        if denom < 0.0 {
            delta = (0.5 * (a - c) / denom).clamp(-0.5, 0.5);
        }
    }
    let half = center as f64;
    let lag = (best as f64 - half + delta).clamp(-half, half);
    let mean_abs = v.iter().map(|x| x.abs()).sum::<f64>() / v.len() as f64;
    let prominence = if mean_abs > 0.0 { v[best] / mean_abs } else { 0.0 };
    TdoaEstimate {
        lag,
        prominence,
        low_confidence: prominence < MIN_PROMINENCE,
    }
}
