//! Synthetic collision events: sensor layout, strike kinematics, surface wave
//! propagation, modal ringing of the struck rod, and noise.
//!
//! Propagation is applied per sensor in the frequency domain: a pure delay
//! `d / c`, an exponential attenuation `exp(-alpha d)`, and a zero-phase
//! low-pass whose cutoff drops with distance. Every factor is non-increasing in
//! `d`, so in a noiseless event the sensor energy falls with distance.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use realfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio_io::{write_clip, write_manifest, AudioError, EventRecord, ManifestRow, MultiChannelClip, NUM_CHANNELS, SAMPLE_RATE};
use crate::features::spectral::{forward_plan, inverse_plan};
use crate::geometry::{geodesic_distance, wrap_angle, ContactPoint, CylinderSpec, Vec3, LABEL_HALF_RANGE_M};
use crate::proprio::{ProprioSample, ProprioTrace};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid strike: {0}")]
    InvalidStrike(String),
    #[error("invalid dataset plan: {0}")]
    PlanInvalid(String),
    #[error("invalid simulator config: {0}")]
    Config(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
}

/// Six microphone sites on the tube surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorLayout {
    positions: Vec<ContactPoint>,
}

impl SensorLayout {
    pub fn new(positions: Vec<ContactPoint>) -> Result<Self, SimError> {
        if positions.len() != NUM_CHANNELS {
            return Err(SimError::Config(format!("layout needs 6 sensors, got {}", positions.len())));
        }
        Ok(Self { positions })
    }

    pub fn positions(&self) -> &[ContactPoint] {
        &self.positions
    }

    pub fn sensor(&self, i: usize) -> ContactPoint {
        self.positions[i]
    }
}

impl Default for SensorLayout {
    fn default() -> Self {
        default_layout()
    }
}

/// Ring A at z = -0.13 m (0, 120, 240 deg), ring B at z = +0.13 m (60, 180, 300 deg).
pub fn default_layout() -> SensorLayout {
    let mut positions = Vec::with_capacity(NUM_CHANNELS);
    for k in 0..3 {
        positions.push(ContactPoint::new(-0.13, (120.0 * k as f64).to_radians()));
    }
    for k in 0..3 {
        positions.push(ContactPoint::new(0.13, (60.0 + 120.0 * k as f64).to_radians()));
    }
    SensorLayout { positions }
}

/// One damped resonance of the struck rod.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub frequency: f64,
    pub damping: f64,
    pub amplitude: f64,
}

/// Ringing character of a rod: its modes plus the width of the initial
/// contact pulse, which supplies the broadband onset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalProfile {
    pub modes: Vec<Mode>,
    pub impact_width_s: f64,
}

impl ModalProfile {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.modes.is_empty() {
            return Err(SimError::InvalidStrike("profile has no modes".into()));
        }
        for m in &self.modes {
            if !(m.frequency > 20.0 && m.frequency < 22_050.0) {
                return Err(SimError::InvalidStrike(format!("mode frequency {} Hz", m.frequency)));
            }
            if !(m.damping > 0.0 && m.amplitude > 0.0) {
                return Err(SimError::InvalidStrike("damping and amplitude must be positive".into()));
            }
        }
        if !(self.impact_width_s > 0.0 && self.impact_width_s < 0.01) {
            return Err(SimError::InvalidStrike(format!("impact width {} s", self.impact_width_s)));
        }
        Ok(())
    }

    /// 3 to 5 modes above a fundamental drawn from `fundamental_hz`.
    pub fn random<R: Rng>(rng: &mut R, fundamental_hz: (f64, f64), damping: (f64, f64)) -> Self {
        const RATIOS: [f64; 5] = [1.0, 2.76, 5.40, 8.93, 13.34];
        let n = rng.random_range(3..=5);
        let f1 = rng.random_range(fundamental_hz.0..fundamental_hz.1);
        let d1 = rng.random_range(damping.0..damping.1);
        let modes = RATIOS[..n]
            .iter()
            .enumerate()
            .map(|(m, r)| Mode {
                frequency: (f1 * r * rng.random_range(0.97..1.03)).min(21_000.0),
                damping: d1 * (1.0 + 0.5 * m as f64),
                amplitude: rng.random_range(0.5..1.0) / (m as f64 + 1.0),
            })
            .collect();
        Self {
            modes,
            impact_width_s: rng.random_range(2.0e-4..4.0e-4),
        }
    }
}

/// A single strike on the rod.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrikeSpec {
    pub contact: ContactPoint,
    /// Unit vector of end-effector motion, world frame.
    pub direction: Vec3,
    pub speed: f64,
    pub rod_profile: ModalProfile,
}

impl StrikeSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        if ((self.direction.norm() - 1.0).abs()) > 1e-6 {
            return Err(SimError::InvalidStrike("direction is not a unit vector".into()));
        }
        if !(self.speed > 0.0 && self.speed.is_finite()) {
            return Err(SimError::InvalidStrike(format!("speed {}", self.speed)));
        }
        if !(self.contact.z().is_finite() && self.contact.theta().is_finite()) {
            return Err(SimError::InvalidStrike("non-finite contact".into()));
        }
        self.rod_profile.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Motor/gearbox band in Hz.
    pub motor_band: (f64, f64),
    /// RMS of the motor noise at the sensors.
    pub motor_level: f64,
    /// Share of motor noise power that arrives as one wave from the mount.
    pub motor_common_fraction: f64,
    /// RMS of independent broadband sensor noise.
    pub ambient_level: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            motor_band: (80.0, 1200.0),
            motor_level: 0.005,
            motor_common_fraction: 0.6,
            ambient_level: 0.0005,
        }
    }
}

impl NoiseConfig {
    pub fn silent() -> Self {
        Self {
            motor_level: 0.0,
            ambient_level: 0.0,
            ..Self::default()
        }
    }
}

/// Short band-limited rustling bursts launched from random surface points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LeafNoise {
    pub bursts: (usize, usize),
    pub duration_s: (f64, f64),
    pub band: (f64, f64),
    /// Burst RMS relative to the strike's source amplitude.
    pub level: f64,
}

impl Default for LeafNoise {
    fn default() -> Self {
        Self {
            bursts: (2, 6),
            duration_s: (0.02, 0.08),
            band: (500.0, 6000.0),
            level: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub wave_speed: f64,
    pub attenuation_alpha: f64,
    /// Low-pass cutoff at the contact point.
    pub dispersion_cutoff_hz: f64,
    /// Cutoff reduction per meter travelled.
    pub dispersion_lowpass_per_m: f64,
    pub dispersion_floor_hz: f64,
    pub noise: NoiseConfig,
    /// When set, noise is rescaled so that signal power over the first second
    /// after onset is this many dB above the noise power.
    pub snr_db: Option<f64>,
    pub clip_duration_s: f64,
    pub onset_jitter_s: f64,
    /// Spread of the strike direction's azimuth around the contact azimuth.
    pub proprio_azimuth_sigma_deg: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            wave_speed: 150.0,
            attenuation_alpha: 8.0,
            dispersion_cutoff_hz: 12_000.0,
            dispersion_lowpass_per_m: 20_000.0,
            dispersion_floor_hz: 2_000.0,
            noise: NoiseConfig::default(),
            snr_db: None,
            clip_duration_s: 2.0,
            onset_jitter_s: 0.1,
            proprio_azimuth_sigma_deg: 12.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        if !(self.wave_speed > 0.0 && self.wave_speed.is_finite()) {
            return bad("wave_speed must be positive");
        }
        if !(self.attenuation_alpha >= 0.0) || !(self.dispersion_lowpass_per_m >= 0.0) {
            return bad("attenuation and dispersion must be non-negative");
        }
        if !(self.dispersion_floor_hz > 0.0 && self.dispersion_cutoff_hz >= self.dispersion_floor_hz) {
            return bad("dispersion cutoffs must satisfy 0 < floor <= cutoff");
        }
        let n = self.noise;
        if !(n.motor_level >= 0.0 && n.ambient_level >= 0.0) {
            return bad("noise levels must be non-negative");
        }
        if !(0.0..=1.0).contains(&n.motor_common_fraction) || !(n.motor_band.0 >= 0.0 && n.motor_band.1 > n.motor_band.0) {
            return bad("bad motor noise band or common fraction");
        }
        if !(self.clip_duration_s >= 1.5 && self.clip_duration_s <= 10.0) {
            return bad("clip_duration_s must be in [1.5, 10]");
        }
        if !(self.onset_jitter_s >= 0.0 && self.onset_jitter_s < 0.25) {
            return bad("onset_jitter_s must be in [0, 0.25)");
        }
        if let Some(s) = self.snr_db {
            if !s.is_finite() {
                return bad("snr_db must be finite");
            }
        }
        Ok(())
    }

    pub fn noiseless(mut self) -> Self {
        self.noise = NoiseConfig::silent();
        self.snr_db = None;
        self
    }

    fn cutoff(&self, d: f64) -> f64 {
        (self.dispersion_cutoff_hz - self.dispersion_lowpass_per_m * d).max(self.dispersion_floor_hz)
    }
}

/// Surface travel time from `contact` to `sensor`.
pub fn propagation_delay(contact: &ContactPoint, sensor: &ContactPoint, cyl: &CylinderSpec, cfg: &SimConfig) -> f64 {
    geodesic_distance(contact, sensor, cyl.radius) / cfg.wave_speed
}

/// Deterministic 64-bit mixer used to derive child seeds.
pub fn child_seed(master: u64, stream: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED69));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Extra per-event conditions.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EventOptions {
    pub leaf: Option<LeafNoise>,
    /// No proprioception: the arm is at rest and no trace is recorded.
    pub stationary: bool,
}

const SOURCE_GAIN: f64 = 1.0;
const FFT_LEN_PAD: usize = 1800;

fn fft_len(n: usize) -> usize {
    // 90_000 = 2^4 3^2 5^4 covers the default 2-s clip with slack for delays
    if n + FFT_LEN_PAD <= 90_000 {
        90_000
    } else {
        let mut m = n + FFT_LEN_PAD;
        while !smooth(m) {
            m += 1;
        }
        m
    }
}

fn smooth(mut m: usize) -> bool {
    for p in [2, 3, 5, 7] {
        while m % p == 0 {
            m /= p;
        }
    }
    m == 1
}

fn gauss<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Source waveform: contact pulse plus damped modes, starting at `onset`.
fn excitation(profile: &ModalProfile, speed: f64, onset: usize, len: usize) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let mut x = vec![0.0; len];
    let w = (profile.impact_width_s * sr).max(2.0);
    let amp = SOURCE_GAIN * speed;
    for (i, slot) in x.iter_mut().enumerate().skip(onset) {
        let t = (i - onset) as f64 / sr;
        let mut v = 0.0;
        for m in &profile.modes {
            v += m.amplitude * (-m.damping * t).exp() * (2.0 * PI * m.frequency * t).sin();
        }
        let k = (i - onset) as f64;
        if k < w {
            v += 0.5 - 0.5 * (2.0 * PI * k / w).cos();
        }
        *slot = amp * v;
    }
    x
}

/// Per-sensor propagation applied to a source spectrum.
fn propagate(src: &[Complex64], d: f64, m: usize, cfg: &SimConfig, out: &mut [Complex64], gain: f64) {
    let sr = SAMPLE_RATE as f64;
    let tau = d / cfg.wave_speed;
    let fc = cfg.cutoff(d);
    let att = (-cfg.attenuation_alpha * d).exp() * gain;
    let step = Complex64::from_polar(1.0, -2.0 * PI * sr / m as f64 * tau);
    let mut rot = Complex64::new(1.0, 0.0);
    for (k, (o, s)) in out.iter_mut().zip(src).enumerate() {
        let f = k as f64 * sr / m as f64;
        let lp = 1.0 / (1.0 + (f / fc).powi(4)).sqrt();
        *o += s * rot * (att * lp);
        rot *= step;
    }
}

/// Complex Gaussian spectrum with flat power in `[lo, hi)` Hz giving time-domain
/// RMS `level`.
fn band_noise_spectrum<R: Rng>(rng: &mut R, m: usize, lo: f64, hi: f64, level: f64, out: &mut [Complex64]) {
    if level <= 0.0 {
        return;
    }
    let sr = SAMPLE_RATE as f64;
    let bins = out.len();
    let in_band: Vec<usize> = (0..bins)
        .filter(|&k| {
            let f = k as f64 * sr / m as f64;
            f >= lo && f < hi
        })
        .collect();
    if in_band.is_empty() {
        return;
    }
    // Parseval: sum of |X|^2 over the full spectrum is m^2 * rms^2
    let per_bin = level * level * (m * m) as f64 / (2.0 * in_band.len() as f64);
    let s = (per_bin / 2.0).sqrt();
    for k in in_band {
        out[k] += Complex64::new(s * gauss(rng), s * gauss(rng));
    }
}

fn zero_dc_nyquist(spec: &mut [Complex64]) {
    let last = spec.len() - 1;
    spec[0].im = 0.0;
    spec[last].im = 0.0;
}

fn to_time(spec: &mut [Complex64], m: usize, n: usize) -> Vec<f64> {
    zero_dc_nyquist(spec);
    let inv = inverse_plan(m);
    let mut out = inv.make_output_vec();
    inv.process(spec, &mut out).expect("fft buffer sizes");
    out.truncate(n);
    let scale = 1.0 / m as f64;
    out.iter_mut().for_each(|v| *v *= scale);
    out
}

fn spectrum(x: &mut [f64]) -> Vec<Complex64> {
    let fwd = forward_plan(x.len());
    let mut out = fwd.make_output_vec();
    fwd.process(x, &mut out).expect("fft buffer sizes");
    out
}

/// Stationary noise (motor + ambient) for all channels, as spectra.
fn noise_spectra<R: Rng>(rng: &mut R, m: usize, cyl: &CylinderSpec, layout: &SensorLayout, cfg: &SimConfig, scale: f64) -> Vec<Vec<Complex64>> {
    let bins = m / 2 + 1;
    let n = cfg.noise;
    let motor_common = n.motor_level * n.motor_common_fraction.sqrt() * scale;
    let motor_indep = n.motor_level * (1.0 - n.motor_common_fraction).sqrt() * scale;
    let mut common = vec![Complex64::new(0.0, 0.0); bins];
    band_noise_spectrum(rng, m, n.motor_band.0, n.motor_band.1, motor_common, &mut common);
    let mount_z = cyl.half_length;
    let sr = SAMPLE_RATE as f64;
    layout
        .positions()
        .iter()
        .map(|s| {
            let mut spec = vec![Complex64::new(0.0, 0.0); bins];
            // the common component travels down the tube from the mount
            if motor_common > 0.0 {
                let tau = (mount_z - s.z()).abs() / cfg.wave_speed;
                let step = Complex64::from_polar(1.0, -2.0 * PI * sr / m as f64 * tau);
                let mut rot = Complex64::new(1.0, 0.0);
                for (o, c) in spec.iter_mut().zip(&common) {
                    *o += c * rot;
                    rot *= step;
                }
            }
            band_noise_spectrum(rng, m, n.motor_band.0, n.motor_band.1, motor_indep, &mut spec);
            band_noise_spectrum(rng, m, 0.0, sr, n.ambient_level * scale, &mut spec);
            spec
        })
        .collect()
}

fn leaf_spectra<R: Rng>(
    rng: &mut R,
    leaf: &LeafNoise,
    m: usize,
    n: usize,
    amp: f64,
    cyl: &CylinderSpec,
    layout: &SensorLayout,
    cfg: &SimConfig,
    out: &mut [Vec<Complex64>],
) {
    let sr = SAMPLE_RATE as f64;
    let bursts = rng.random_range(leaf.bursts.0..=leaf.bursts.1.max(leaf.bursts.0));
    for _ in 0..bursts {
        let len = (rng.random_range(leaf.duration_s.0..=leaf.duration_s.1) * sr) as usize;
        let len = len.clamp(16, n / 4);
        let start = rng.random_range(0..n - len);
        let src_pt = ContactPoint::new(
            rng.random_range(-cyl.half_length..cyl.half_length),
            rng.random_range(-PI..PI),
        );
        // white burst, band-limited in the frequency domain below
        let mut x = vec![0.0; m];
        for i in 0..len {
            let env = 0.5 - 0.5 * (2.0 * PI * i as f64 / len as f64).cos();
            x[start + i] = amp * leaf.level * env * gauss(rng);
        }
        let mut spec = spectrum(&mut x);
        for (k, v) in spec.iter_mut().enumerate() {
            let f = k as f64 * sr / m as f64;
            if f < leaf.band.0 || f >= leaf.band.1 {
                *v = Complex64::new(0.0, 0.0);
            }
        }
        // band-limiting removes power; restore the nominal RMS
        let keep = ((leaf.band.1.min(sr / 2.0) - leaf.band.0) / (sr / 2.0)).clamp(1e-3, 1.0);
        let g = 1.0 / keep.sqrt();
        for (c, s) in layout.positions().iter().enumerate() {
            let d = geodesic_distance(&src_pt, s, cyl.radius);
            propagate(&spec, d, m, cfg, &mut out[c], g);
        }
    }
}

/// Smooth approach toward the contact: accelerate, cruise at the strike speed,
/// then stop at impact. 100 samples over one second, `t = 0` at the onset.
pub fn approach_trace(direction: Vec3, speed: f64, contact_position: Vec3) -> ProprioTrace {
    const N: usize = 100;
    const T_ACC: f64 = 0.15;
    const T_STOP: f64 = 0.04;
    let t0 = -0.5;
    // speed profile; position is integrated analytically from the trapezoid
    let vel = |t: f64| -> f64 {
        if t < t0 {
            0.0
        } else if t < t0 + T_ACC {
            speed * (t - t0) / T_ACC
        } else if t < 0.0 {
            speed
        } else if t < T_STOP {
            speed * (1.0 - t / T_STOP)
        } else {
            0.0
        }
    };
    let dist = |t: f64| -> f64 {
        // signed arc length relative to t = 0
        let acc_end = t0 + T_ACC;
        let s_at = |t: f64| -> f64 {
            if t <= t0 {
                0.0
            } else if t <= acc_end {
                0.5 * speed * (t - t0).powi(2) / T_ACC
            } else if t <= 0.0 {
                0.5 * speed * T_ACC + speed * (t - acc_end)
            } else if t <= T_STOP {
                0.5 * speed * T_ACC + speed * (-acc_end) + speed * (t - 0.5 * t * t / T_STOP)
            } else {
                0.5 * speed * T_ACC + speed * (-acc_end) + speed * 0.5 * T_STOP
            }
        };
        s_at(t) - s_at(0.0)
    };
    let samples = (0..N)
        .map(|k| {
            let t = -0.5 + k as f64 / N as f64;
            ProprioSample {
                t,
                position: contact_position + direction.scale(dist(t)),
                orientation: [1.0, 0.0, 0.0, 0.0],
                velocity: direction.scale(vel(t)),
            }
        })
        .collect();
    ProprioTrace::new(samples).expect("timestamps are increasing")
}

/// Arm at rest for the whole window.
pub fn stationary_trace(position: Vec3) -> ProprioTrace {
    let samples = (0..100)
        .map(|k| ProprioSample {
            t: -0.5 + k as f64 / 100.0,
            position,
            orientation: [1.0, 0.0, 0.0, 0.0],
            velocity: Vec3::ZERO,
        })
        .collect();
    ProprioTrace::new(samples).expect("timestamps are increasing")
}

/// Nominal end-effector position at the moment of contact.
pub const REST_POSITION: Vec3 = Vec3 { x: 0.45, y: 0.0, z: 0.35 };

/// Two-second six-channel recording of one strike.
pub fn synth_event(strike: &StrikeSpec, layout: &SensorLayout, cyl: &CylinderSpec, cfg: &SimConfig, seed: u64) -> Result<EventRecord, SimError> {
    synth_event_with(strike, layout, cyl, cfg, seed, &EventOptions::default())
}

pub fn synth_event_with(
    strike: &StrikeSpec,
    layout: &SensorLayout,
    cyl: &CylinderSpec,
    cfg: &SimConfig,
    seed: u64,
    opts: &EventOptions,
) -> Result<EventRecord, SimError> {
    strike.validate()?;
    cfg.validate()?;
    cyl.validate().map_err(|e| SimError::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = SAMPLE_RATE as f64;
    let n = (cfg.clip_duration_s * sr).round() as usize;
    let m = fft_len(n);
    let onset_s = 1.0 + if cfg.onset_jitter_s > 0.0 { rng.random_range(-cfg.onset_jitter_s..cfg.onset_jitter_s) } else { 0.0 };
    let onset = (onset_s * sr).round() as usize;

    let mut src = excitation(&strike.rod_profile, strike.speed, onset, m);
    let src_spec = spectrum(&mut src);
    let bins = m / 2 + 1;
    let mut chans: Vec<Vec<Complex64>> = vec![vec![Complex64::new(0.0, 0.0); bins]; NUM_CHANNELS];
    for (c, s) in layout.positions().iter().enumerate() {
        let d = geodesic_distance(&strike.contact, s, cyl.radius);
        propagate(&src_spec, d, m, cfg, &mut chans[c], 1.0);
    }

    let noisy = cfg.noise.motor_level > 0.0 || cfg.noise.ambient_level > 0.0;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(child_seed(seed, 1, 0));
    let mut leaf_rng = ChaCha8Rng::seed_from_u64(child_seed(seed, 2, 0));
    let mut signal: Vec<Vec<f64>> = chans.iter_mut().map(|s| to_time(s, m, n)).collect();

    if noisy || opts.leaf.is_some() {
        let mut extra = if noisy {
            let mut scale = 1.0;
            if let Some(snr) = cfg.snr_db {
                let end = (onset + sr as usize).min(n);
                let p_sig = signal.iter().map(|c| c[onset..end].iter().map(|v| v * v).sum::<f64>()).sum::<f64>()
                    / (NUM_CHANNELS * (end - onset)) as f64;
                let n0 = cfg.noise;
                let p_noise = n0.motor_level.powi(2) + n0.ambient_level.powi(2);
                scale = (p_sig / (p_noise * 10f64.powf(snr / 10.0))).sqrt();
            }
            noise_spectra(&mut noise_rng, m, cyl, layout, cfg, scale)
        } else {
            vec![vec![Complex64::new(0.0, 0.0); bins]; NUM_CHANNELS]
        };
        if let Some(leaf) = &opts.leaf {
            leaf_spectra(&mut leaf_rng, leaf, m, n, SOURCE_GAIN * strike.speed, cyl, layout, cfg, &mut extra);
        }
        for (sig, sp) in signal.iter_mut().zip(extra.iter_mut()) {
            let add = to_time(sp, m, n);
            sig.iter_mut().zip(add).for_each(|(a, b)| *a += b);
        }
    }
    let clip = MultiChannelClip::from_f64(signal)?;

    let position = REST_POSITION;
    let proprio = if opts.stationary { None } else { Some(approach_trace(strike.direction, strike.speed, position)) };
    let mut metadata = BTreeMap::new();
    metadata.insert("onset_s".into(), format!("{:.6}", onset as f64 / sr));
    metadata.insert("speed".into(), format!("{:.6}", strike.speed));
    metadata.insert("seed".into(), seed.to_string());
    Ok(EventRecord {
        clip,
        proprio,
        label: Some(strike.contact),
        metadata,
    })
}

/// Collision-free recording of the stationary noise, for building noise profiles.
pub fn synth_reference_noise(layout: &SensorLayout, cyl: &CylinderSpec, cfg: &SimConfig, duration_s: f64, seed: u64) -> Result<MultiChannelClip, SimError> {
    cfg.validate()?;
    let n = (duration_s * SAMPLE_RATE as f64).round() as usize;
    if n == 0 {
        return Err(SimError::Config("reference duration must be positive".into()));
    }
    let m = fft_len(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spectra = noise_spectra(&mut rng, m, cyl, layout, cfg, 1.0);
    let chans = spectra.iter_mut().map(|s| to_time(s, m, n)).collect();
    Ok(MultiChannelClip::from_f64(chans)?)
}

/// Uniform label on `z in [-0.10, 0.10]`, `theta in [-pi, pi)`.
pub fn sample_contact<R: Rng>(rng: &mut R) -> ContactPoint {
    let z = rng.random_range(-LABEL_HALF_RANGE_M..=LABEL_HALF_RANGE_M);
    let theta = rng.random_range(-PI..PI);
    ContactPoint::label(z, theta).expect("sampled inside the labeled band")
}

/// Strike speed and direction distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Kinematics {
    pub speed: (f64, f64),
    pub max_elevation_deg: f64,
}

impl Default for Kinematics {
    fn default() -> Self {
        Self {
            speed: (0.1, 0.4),
            max_elevation_deg: 10.0,
        }
    }
}

impl Kinematics {
    /// Slower, steeper strikes than the training distribution.
    pub fn novel() -> Self {
        Self {
            speed: (0.08, 0.3),
            max_elevation_deg: 30.0,
        }
    }
}

/// Strike direction whose azimuth scatters around the contact azimuth.
pub fn sample_strike<R: Rng>(rng: &mut R, contact: ContactPoint, kin: &Kinematics, profile: &ModalProfile, azimuth_sigma_deg: f64) -> StrikeSpec {
    let az = contact.theta() + azimuth_sigma_deg.to_radians() * gauss(rng);
    let el = if kin.max_elevation_deg > 0.0 {
        let e = kin.max_elevation_deg.to_radians();
        rng.random_range(-e..e)
    } else {
        0.0
    };
    let direction = Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()).normalized();
    let speed = if kin.speed.1 > kin.speed.0 { rng.random_range(kin.speed.0..kin.speed.1) } else { kin.speed.0 };
    StrikeSpec {
        contact,
        direction,
        speed,
        rod_profile: profile.clone(),
    }
}

/// The four test conditions, plus training data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    /// Same distribution as training.
    Test1,
    /// Held-out rods.
    Test2,
    /// Held-out rods, novel kinematics, leaf noise.
    Test3,
    /// As split 3 but with the arm at rest and no proprioception.
    Test4,
}

impl Split {
    pub const ALL: [Split; 5] = [Split::Train, Split::Test1, Split::Test2, Split::Test3, Split::Test4];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test1 => "test1",
            Split::Test2 => "test2",
            Split::Test3 => "test3",
            Split::Test4 => "test4",
        }
    }

    fn stream(self) -> u64 {
        self as u64 + 10
    }

    fn uses_heldout_rods(self) -> bool {
        matches!(self, Split::Test2 | Split::Test3 | Split::Test4)
    }
}

/// How many events per split, and how the rods and strikes are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetPlan {
    pub n_train: usize,
    pub n_test: usize,
    pub train_rods: usize,
    pub heldout_rods: usize,
    pub train_fundamental_hz: (f64, f64),
    pub heldout_fundamental_hz: (f64, f64),
    pub train_damping: (f64, f64),
    pub heldout_damping: (f64, f64),
    pub kinematics: Kinematics,
    pub novel_kinematics: Kinematics,
    pub leaf: LeafNoise,
    pub reference_noise_s: f64,
}

impl Default for DatasetPlan {
    fn default() -> Self {
        Self {
            n_train: 200,
            n_test: 50,
            train_rods: 4,
            heldout_rods: 6,
            train_fundamental_hz: (80.0, 1200.0),
            heldout_fundamental_hz: (120.0, 1600.0),
            train_damping: (8.0, 30.0),
            heldout_damping: (15.0, 45.0),
            kinematics: Kinematics::default(),
            novel_kinematics: Kinematics::novel(),
            leaf: LeafNoise::default(),
            reference_noise_s: 2.0,
        }
    }
}

impl DatasetPlan {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::PlanInvalid(m.to_string()));
        if self.n_train == 0 {
            return bad("n_train must be positive");
        }
        if self.train_rods == 0 || self.heldout_rods == 0 {
            return bad("rod counts must be positive");
        }
        for (lo, hi) in [self.train_fundamental_hz, self.heldout_fundamental_hz] {
            if !(lo > 20.0 && hi > lo && hi * 13.34 * 0.97 < 22_050.0) {
                return bad("fundamental range must lie in (20 Hz, ~1650 Hz)");
            }
        }
        for (lo, hi) in [self.train_damping, self.heldout_damping] {
            if !(lo > 0.0 && hi > lo) {
                return bad("damping ranges must be positive and non-empty");
            }
        }
        for k in [self.kinematics, self.novel_kinematics] {
            if !(k.speed.0 > 0.0 && k.speed.1 >= k.speed.0) {
                return bad("speed ranges must be positive");
            }
        }
        if !(self.reference_noise_s >= 0.5) {
            return bad("reference_noise_s must be at least 0.5 s");
        }
        Ok(())
    }

    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.n_train,
            _ => self.n_test,
        }
    }

    /// Training and held-out rod profiles; the two sets never share a mode.
    pub fn rods(&self, seed: u64) -> (Vec<ModalProfile>, Vec<ModalProfile>) {
        let mut rng = ChaCha8Rng::seed_from_u64(child_seed(seed, 3, 0));
        let train: Vec<ModalProfile> = (0..self.train_rods)
            .map(|_| ModalProfile::random(&mut rng, self.train_fundamental_hz, self.train_damping))
            .collect();
        let mut held = Vec::with_capacity(self.heldout_rods);
        while held.len() < self.heldout_rods {
            let p = ModalProfile::random(&mut rng, self.heldout_fundamental_hz, self.heldout_damping);
            let shared = train
                .iter()
                .any(|t| t.modes.iter().any(|a| p.modes.iter().any(|b| a.frequency == b.frequency && a.damping == b.damping)));
            if !shared {
                held.push(p);
            }
        }
        (train, held)
    }
}

/// Generates one split in memory. Event `i` depends only on `(seed, split, i)`.
pub fn generate_split(plan: &DatasetPlan, split: Split, layout: &SensorLayout, cyl: &CylinderSpec, cfg: &SimConfig, seed: u64) -> Result<Vec<EventRecord>, SimError> {
    split_events(plan, split, layout, cyl, cfg, seed)?.collect()
}

/// Lazily synthesizes the events of one split, in index order.
pub fn split_events<'a>(
    plan: &'a DatasetPlan,
    split: Split,
    layout: &'a SensorLayout,
    cyl: &'a CylinderSpec,
    cfg: &'a SimConfig,
    seed: u64,
) -> Result<impl Iterator<Item = Result<EventRecord, SimError>> + 'a, SimError> {
    plan.validate()?;
    let (train_rods, held_rods) = plan.rods(seed);
    let rods = if split.uses_heldout_rods() { held_rods } else { train_rods };
    let kin = if matches!(split, Split::Test3 | Split::Test4) { plan.novel_kinematics } else { plan.kinematics };
    let opts = EventOptions {
        leaf: matches!(split, Split::Test3 | Split::Test4).then_some(plan.leaf),
        stationary: split == Split::Test4,
    };
    Ok((0..plan.count(split)).map(move |i| {
        let s = child_seed(seed, split.stream(), i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let rod = rng.random_range(0..rods.len());
        let contact = sample_contact(&mut rng);
        let strike = sample_strike(&mut rng, contact, &kin, &rods[rod], cfg.proprio_azimuth_sigma_deg);
        let mut ev = synth_event_with(&strike, layout, cyl, cfg, child_seed(s, 4, 0), &opts)?;
        ev.metadata.insert("split".into(), split.name().into());
        ev.metadata.insert("rod".into(), format!("{}{}", if split.uses_heldout_rods() { "H" } else { "T" }, rod));
        Ok(ev)
    }))
}

/// Summary of a dataset written by [`synth_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub root: PathBuf,
    pub manifests: BTreeMap<String, PathBuf>,
    pub reference_noise: PathBuf,
    pub events: usize,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> SimError {
    SimError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

/// Writes every split as `<out>/<split>/manifest.jsonl` with clips and proprio
/// traces beside it, plus `<out>/reference_noise.wav`. Empty test splits are
/// skipped.
pub fn synth_dataset(plan: &DatasetPlan, layout: &SensorLayout, cyl: &CylinderSpec, cfg: &SimConfig, seed: u64, out: &Path) -> Result<DatasetSummary, SimError> {
    plan.validate()?;
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let reference = synth_reference_noise(layout, cyl, cfg, plan.reference_noise_s, child_seed(seed, 5, 0))?;
    let ref_path = out.join("reference_noise.wav");
    write_clip(&reference, &ref_path)?;
    let mut manifests = BTreeMap::new();
    let mut events = 0;
    for split in Split::ALL {
        if plan.count(split) == 0 {
            continue;
        }
        let dir = out.join(split.name());
        std::fs::create_dir_all(dir.join("clips")).map_err(|e| io_err(&dir, e))?;
        let mut rows = Vec::with_capacity(plan.count(split));
        for (i, ev) in split_events(plan, split, layout, cyl, cfg, seed)?.enumerate() {
            let ev = ev?;
            let clip_rel = format!("clips/{i:05}.wav");
            write_clip(&ev.clip, &dir.join(&clip_rel))?;
            let proprio_path = match &ev.proprio {
                Some(t) => {
                    let rel = format!("clips/{i:05}.csv");
                    t.write(&dir.join(&rel)).map_err(AudioError::from)?;
                    Some(rel)
                }
                None => None,
            };
            let label = ev.label.expect("simulated events are labeled");
            rows.push(ManifestRow {
                clip_path: clip_rel,
                proprio_path,
                z_cm: Some(label.z() * 100.0),
                theta_rad: Some(label.theta()),
                meta: ev.metadata.clone(),
            });
        }
        let mpath = dir.join("manifest.jsonl");
        write_manifest(&mpath, &rows)?;
        manifests.insert(split.name().to_string(), mpath);
        events += rows.len();
    }
    Ok(DatasetSummary {
        root: out.to_path_buf(),
        manifests,
        reference_noise: ref_path,
        events,
    })
}

/// Angle of a unit direction in the horizontal plane.
pub fn direction_azimuth(d: Vec3) -> f64 {
    wrap_angle(d.y.atan2(d.x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{gcc_phat_all, tdoa_estimate};

    fn profile() -> ModalProfile {
        ModalProfile {
            modes: vec![
                Mode { frequency: 400.0, damping: 20.0, amplitude: 1.0 },
                Mode { frequency: 1100.0, damping: 30.0, amplitude: 0.5 },
                Mode { frequency: 2160.0, damping: 40.0, amplitude: 0.3 },
            ],
            impact_width_s: 3e-4,
        }
    }

    fn strike(contact: ContactPoint) -> StrikeSpec {
        StrikeSpec {
            contact,
            direction: Vec3::new(contact.theta().cos(), contact.theta().sin(), 0.0),
            speed: 0.3,
            rod_profile: profile(),
        }
    }

    fn quiet() -> SimConfig {
        SimConfig::default().noiseless()
    }

    #[test]
    fn layout_rings() {
        let l = default_layout();
        assert_eq!(l.positions().len(), 6);
        assert!(l.positions()[..3].iter().all(|p| p.z() == -0.13));
        assert!(l.positions()[3..].iter().all(|p| p.z() == 0.13));
        let r = CylinderSpec::default().radius;
        let mut min = f64::INFINITY;
        for i in 0..6 {
            for j in i + 1..6 {
                min = min.min(geodesic_distance(&l.sensor(i), &l.sensor(j), r));
            }
        }
        // oracle: nearest pair is within a ring, 120 deg apart on r = 0.1016
        let expect = r * 2.0 * PI / 3.0;
        assert!((min - expect).abs() < 1e-9 && min > 0.1, "{min}");
    }

    #[test]
    fn delay_examples() {
        let cyl = CylinderSpec::default();
        let cfg = SimConfig::default();
        let s = ContactPoint::new(0.13, 0.4);
        assert_eq!(propagation_delay(&s, &s, &cyl, &cfg), 0.0);
        let a = ContactPoint::new(-0.15, 0.2);
        let b = ContactPoint::new(0.15, 0.2);
        assert!((propagation_delay(&a, &b, &cyl, &cfg) - 0.002).abs() < 1e-12);
        assert_eq!(propagation_delay(&a, &s, &cyl, &cfg), propagation_delay(&s, &a, &cyl, &cfg));
    }

    #[test]
    fn equidistant_channels_identical() {
        let cyl = CylinderSpec::default();
        let l = default_layout();
        let c = ContactPoint::new(-0.05, 60f64.to_radians());
        let ev = synth_event(&strike(c), &l, &cyl, &quiet(), 1).unwrap();
        let (a, b) = (ev.clip.channel(0), ev.clip.channel(1));
        assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-6));
        assert!(ev.clip.peak_amplitude() > 0.01);
        assert_eq!(ev.clip.len(), 88_200);
        assert_eq!(ev.proprio.as_ref().unwrap().len(), 100);
    }

    #[test]
    fn pair_tdoa_matches_delay_difference() {
        let cyl = CylinderSpec::default();
        let l = default_layout();
        let cfg = quiet();
        // sensor 0 at z=-0.13, theta=0; sensor 3 at z=+0.13, theta=60 deg.
        // On the theta=0 meridian the difference d3 - d0 = 0.15 m at z where
        // hypot(0.13 - z, r*pi/3) - (z + 0.13) = 0.15; solve by bisection.
        let r = cyl.radius;
        let g = |z: f64| (0.13 - z).hypot(r * PI / 3.0) - (z + 0.13) - 0.15;
        let (mut lo, mut hi) = (-0.13, 0.13);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let c = ContactPoint::new(0.5 * (lo + hi), 0.0);
        let ev = synth_event(&strike(c), &l, &cyl, &cfg, 2).unwrap();
        let set = gcc_phat_all(&ev.clip, 64).unwrap();
        let lag = tdoa_estimate(set.vector(set.pair_index(0, 3).unwrap()).as_slice().unwrap()).lag;
        assert!((lag - 44.1).abs() <= 0.5, "lag {lag}");
    }

    #[test]
    fn tdoa_consistent_with_delays() {
        let cyl = CylinderSpec::default();
        let l = default_layout();
        let cfg = quiet();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for e in 0..6 {
            let c = sample_contact(&mut rng);
            let ev = synth_event(&strike(c), &l, &cyl, &cfg, e).unwrap();
            let set = gcc_phat_all(&ev.clip, 64).unwrap();
            for (p, &(i, j)) in set.pairs.iter().enumerate() {
                let want = (propagation_delay(&c, &l.sensor(j), &cyl, &cfg) - propagation_delay(&c, &l.sensor(i), &cyl, &cfg)) * SAMPLE_RATE as f64;
                if want.abs() < 60.0 {
                    let got = tdoa_estimate(set.vector(p).as_slice().unwrap()).lag;
                    assert!((got - want).abs() <= 0.5, "pair ({i},{j}): {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn deterministic() {
        let cyl = CylinderSpec::default();
        let l = default_layout();
        let s = strike(ContactPoint::new(0.03, -2.0));
        let opts = EventOptions { leaf: Some(LeafNoise::default()), stationary: false };
        let a = synth_event_with(&s, &l, &cyl, &SimConfig::default(), 9, &opts).unwrap();
        let b = synth_event_with(&s, &l, &cyl, &SimConfig::default(), 9, &opts).unwrap();
        assert_eq!(a, b);
        let c = synth_event_with(&s, &l, &cyl, &SimConfig::default(), 10, &opts).unwrap();
        assert_ne!(a.clip, c.clip);
    }

    #[test]
    fn energy_falls_with_distance() {
        let cyl = CylinderSpec::default();
        let l = default_layout();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for e in 0..5 {
            let c = sample_contact(&mut rng);
            let ev = synth_event(&strike(c), &l, &cyl, &quiet(), e).unwrap();
            let mut pairs: Vec<(f64, f64)> = (0..6)
                .map(|k| {
                    let d = geodesic_distance(&c, &l.sensor(k), cyl.radius);
                    let rms = ev.clip.channel(k).iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
                    (d, rms)
                })
                .collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            for w in pairs.windows(2) {
                assert!(w[1].1 <= w[0].1 * (1.0 + 1e-6), "{pairs:?}");
            }
        }
    }

    #[test]
    fn snr_scaling() {
        let cyl = CylinderSpec::default();
        let l = default_layout();
        let c = ContactPoint::new(0.0, 0.5);
        let clean = synth_event(&strike(c), &l, &cyl, &quiet(), 3).unwrap();
        let cfg = SimConfig { snr_db: Some(20.0), ..SimConfig::default() };
        let noisy = synth_event(&strike(c), &l, &cyl, &cfg, 3).unwrap();
        let onset = (clean.metadata["onset_s"].parse::<f64>().unwrap() * 44_100.0).round() as usize;
        let (mut ps, mut pn) = (0.0, 0.0);
        for k in 0..6 {
            for i in onset..(onset + 44_100).min(clean.clip.len()) {
                let s = clean.clip.channel(k)[i] as f64;
                let n = noisy.clip.channel(k)[i] as f64 - s;
                ps += s * s;
                pn += n * n;
            }
        }
        let snr = 10.0 * (ps / pn).log10();
        assert!((snr - 20.0).abs() < 1.0, "snr {snr}");
    }

    #[test]
    fn reference_noise_level() {
        let cfg = SimConfig::default();
        let clip = synth_reference_noise(&default_layout(), &CylinderSpec::default(), &cfg, 1.0, 4).unwrap();
        let want = (cfg.noise.motor_level.powi(2) + cfg.noise.ambient_level.powi(2)).sqrt();
        for k in 0..6 {
            let rms = (clip.channel(k).iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / clip.len() as f64).sqrt();
            assert!((rms / want - 1.0).abs() < 0.1, "{rms} vs {want}");
        }
    }

    #[test]
    fn theta_histogram_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let bins = 20;
        let n = 10_000;
        let mut counts = vec![0usize; bins];
        for _ in 0..n {
            let c = sample_contact(&mut rng);
            assert!(c.z().abs() <= 0.10 && c.theta() > -PI && c.theta() <= PI);
            let b = (((c.theta() + PI) / (2.0 * PI)) * bins as f64) as usize;
            counts[b.min(bins - 1)] += 1;
        }
        let e = n as f64 / bins as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        // chi-square with 19 dof: mean 19, sd sqrt(38); 3 sigma bound
        assert!(chi2 < 19.0 + 3.0 * 38f64.sqrt(), "chi2 {chi2}");
    }

    #[test]
    fn direction_tracks_contact_azimuth() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut sq = 0.0;
        let n = 4000;
        for _ in 0..n {
            let c = sample_contact(&mut rng);
            let s = sample_strike(&mut rng, c, &Kinematics { speed: (0.1, 0.4), max_elevation_deg: 0.0 }, &profile(), 12.0);
            sq += wrap_angle(direction_azimuth(s.direction) - c.theta()).powi(2);
        }
        let sd = (sq / n as f64).sqrt().to_degrees();
        assert!((sd - 12.0).abs() < 0.6, "{sd}");
    }

    #[test]
    fn approach_trace_shape() {
        let d = Vec3::new(0.0, 1.0, 0.0);
        let t = approach_trace(d, 0.3, REST_POSITION);
        let s = t.samples();
        assert_eq!(s.len(), 100);
        let peak = s.iter().map(|p| p.velocity.norm()).fold(0.0, f64::max);
        assert!((peak - 0.3).abs() < 1e-12);
        assert_eq!(s[0].velocity.norm(), 0.0);
        assert!(s.last().unwrap().velocity.norm() == 0.0);
        // at t = 0 the arm is at the contact position
        let at0 = s.iter().find(|p| p.t.abs() < 1e-9).unwrap();
        assert!(at0.position.distance(REST_POSITION) < 1e-12);
        // positions consistent with velocities (trapezoid integration)
        for w in s.windows(2) {
            let dt = w[1].t - w[0].t;
            let dp = (w[1].position - w[0].position).dot(d);
            let avg = 0.5 * (w[0].velocity.dot(d) + w[1].velocity.dot(d));
            assert!((dp - avg * dt).abs() < 2e-3 * dt + 1e-9 || dp >= 0.0);
        }
    }

    #[test]
    fn invalid_strike_rejected() {
        let mut s = strike(ContactPoint::new(0.0, 0.0));
        s.speed = 0.0;
        assert!(matches!(synth_event(&s, &default_layout(), &CylinderSpec::default(), &quiet(), 0), Err(SimError::InvalidStrike(_))));
        let mut s = strike(ContactPoint::new(0.0, 0.0));
        s.direction = Vec3::new(1.0, 1.0, 0.0);
        assert!(matches!(synth_event(&s, &default_layout(), &CylinderSpec::default(), &quiet(), 0), Err(SimError::InvalidStrike(_))));
    }

    #[test]
    fn rods_disjoint_and_dataset_on_disk() {
        let plan = DatasetPlan { n_train: 6, n_test: 2, ..DatasetPlan::default() };
        let (tr, he) = plan.rods(5);
        assert_eq!((tr.len(), he.len()), (4, 6));
        for a in &tr {
            for b in &he {
                for ma in &a.modes {
                    assert!(b.modes.iter().all(|mb| (ma.frequency, ma.damping) != (mb.frequency, mb.damping)));
                }
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let sum = synth_dataset(&plan, &default_layout(), &CylinderSpec::default(), &SimConfig::default(), 5, dir.path()).unwrap();
        assert_eq!(sum.events, 6 + 4 * 2);
        let rows = crate::audio_io::load_manifest(&sum.manifests["train"]).unwrap();
        assert_eq!(rows.len(), 6);
        let clips = std::fs::read_dir(dir.path().join("train/clips")).unwrap().filter(|e| e.as_ref().unwrap().path().extension().unwrap() == "wav").count();
        assert_eq!(clips, 6);
        let t4 = crate::audio_io::load_manifest(&sum.manifests["test4"]).unwrap();
        assert!(t4.iter().all(|r| r.proprio_path.is_none()));
        let ev = rows[0].resolve().unwrap();
        assert!(ev.proprio.is_some() && ev.label.is_some());
        assert!(matches!(
            synth_dataset(&DatasetPlan { n_train: 0, ..plan }, &default_layout(), &CylinderSpec::default(), &SimConfig::default(), 5, dir.path()),
            Err(SimError::PlanInvalid(_))
        ));
    }
}
