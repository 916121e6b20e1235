//! Six-channel clip container, WAV reading/writing and dataset manifests.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::ContactPoint;
use crate::proprio::{ProprioError, ProprioTrace};

pub const SAMPLE_RATE: u32 = 44_100;
pub const NUM_CHANNELS: usize = 6;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("{0}: not a RIFF/WAVE file")]
    NotWav(String),
    #[error("expected 6 channels, found {0}")]
    ChannelMismatch(usize),
    #[error("expected 44100 Hz, found {0} Hz")]
    RateMismatch(u32),
    #[error("{0}: data chunk truncated")]
    TruncatedData(String),
    #[error("unsupported sample format: {0}")]
    UnsupportedFormat(String),
    #[error("invalid clip: {0}")]
    InvalidClip(String),
    #[error("{path}: {reason}")]
    IoFailure { path: String, reason: String },
    #[error("manifest line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error(transparent)]
    Proprio(#[from] ProprioError),
}

/// Six synchronized sample streams at 44.1 kHz.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiChannelClip {
    channels: Vec<Vec<f32>>,
}

impl MultiChannelClip {
    pub fn new(channels: Vec<Vec<f32>>) -> Result<Self, AudioError> {
        if channels.len() != NUM_CHANNELS {
            return Err(AudioError::ChannelMismatch(channels.len()));
        }
        let n = channels[0].len();
        if n == 0 {
            return Err(AudioError::InvalidClip("zero-length channels".into()));
        }
        if channels.iter().any(|c| c.len() != n) {
            return Err(AudioError::InvalidClip("channel lengths differ".into()));
        }
        if channels.iter().flatten().any(|v| !v.is_finite()) {
            return Err(AudioError::InvalidClip("non-finite sample".into()));
        }
        Ok(Self { channels })
    }

    /// Builds a clip from f64 buffers, rounding to f32.
    pub fn from_f64(channels: Vec<Vec<f64>>) -> Result<Self, AudioError> {
        Self::new(
            channels
                .into_iter()
                .map(|c| c.into_iter().map(|v| v as f32).collect())
                .collect(),
        )
    }

    pub fn silence(samples: usize) -> Result<Self, AudioError> {
        Self::new(vec![vec![0.0; samples]; NUM_CHANNELS])
    }

    pub fn channels(&self) -> &[Vec<f32>] {
        &self.channels
    }

    pub fn channel(&self, i: usize) -> &[f32] {
        &self.channels[i]
    }

    pub fn channel_f64(&self, i: usize) -> Vec<f64> {
        self.channels[i].iter().map(|&v| v as f64).collect()
    }

    pub fn into_channels(self) -> Vec<Vec<f32>> {
        self.channels
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / SAMPLE_RATE as f64
    }

    /// Largest absolute sample over all channels.
    pub fn peak_amplitude(&self) -> f32 {
        self.channels
            .iter()
            .flatten()
            .fold(0.0f32, |m, &v| m.max(v.abs()))
    }

    /// Multiplies every sample by `gain`.
    pub fn scaled(&self, gain: f32) -> Result<Self, AudioError> {
        Self::new(
            self.channels
                .iter()
                .map(|c| c.iter().map(|&v| v * gain).collect())
                .collect(),
        )
    }
}

/// One labeled (or unlabeled) collision event.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub clip: MultiChannelClip,
    pub proprio: Option<ProprioTrace>,
    pub label: Option<ContactPoint>,
    pub metadata: BTreeMap<String, String>,
}

fn io_fail(path: &Path, e: impl std::fmt::Display) -> AudioError {
    AudioError::IoFailure {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

/// Reads a 6-channel 44.1 kHz WAV (PCM16 or float32). PCM16 samples are scaled
/// by 1/32768.
pub fn read_clip(path: &Path) -> Result<MultiChannelClip, AudioError> {
    let name = path.display().to_string();
    let mut magic = [0u8; 12];
    let mut f = File::open(path).map_err(|e| io_fail(path, e))?;
    if f.read_exact(&mut magic).is_err() || &magic[0..4] != b"RIFF" || &magic[8..12] != b"WAVE" {
        return Err(AudioError::NotWav(name));
    }
    let reader = hound::WavReader::open(path).map_err(|e| map_hound(e, &name))?;
    let spec = reader.spec();
    if spec.channels as usize != NUM_CHANNELS {
        return Err(AudioError::ChannelMismatch(spec.channels as usize));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(AudioError::RateMismatch(spec.sample_rate));
    }
    let frames = reader.duration() as usize;
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<Result<_, _>>()
            .map_err(|e| map_hound(e, &name))?,
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(|e| map_hound(e, &name))?,
        (fmt, bits) => {
            return Err(AudioError::UnsupportedFormat(format!("{fmt:?} {bits}-bit")));
        }
    };
    if interleaved.len() < frames * NUM_CHANNELS {
        return Err(AudioError::TruncatedData(name));
    }
    let mut channels = vec![Vec::with_capacity(frames); NUM_CHANNELS];
    for frame in interleaved.chunks_exact(NUM_CHANNELS) {
        for (c, &v) in frame.iter().enumerate() {
            channels[c].push(v);
        }
    }
    MultiChannelClip::new(channels)
}

fn map_hound(e: hound::Error, name: &str) -> AudioError {
    match e {
        hound::Error::IoError(io)
            if io.kind() == std::io::ErrorKind::UnexpectedEof || io.to_string().contains("enough bytes") =>
        {
            AudioError::TruncatedData(name.to_string())
        }
        hound::Error::IoError(io) => AudioError::IoFailure {
            path: name.to_string(),
            reason: io.to_string(),
        },
        hound::Error::FormatError(msg) if msg.contains("RIFF") || msg.contains("WAVE") => {
            AudioError::NotWav(name.to_string())
        }
        other => AudioError::UnsupportedFormat(other.to_string()),
    }
}

/// Writes the clip as IEEE float32 so that reading it back is lossless.
pub fn write_clip(clip: &MultiChannelClip, path: &Path) -> Result<(), AudioError> {
    let spec = hound::WavSpec {
        channels: NUM_CHANNELS as u16,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| io_fail(path, e))?;
    for i in 0..clip.len() {
        for c in clip.channels() {
            w.write_sample(c[i]).map_err(|e| io_fail(path, e))?;
        }
    }
    w.finalize().map_err(|e| io_fail(path, e))
}

/// Writes 16-bit PCM, clipping to [-1, 1). Real recordings arrive this way.
pub fn write_clip_pcm16(clip: &MultiChannelClip, path: &Path) -> Result<(), AudioError> {
    let spec = hound::WavSpec {
        channels: NUM_CHANNELS as u16,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| io_fail(path, e))?;
    for i in 0..clip.len() {
        for c in clip.channels() {
            let q = (c[i] * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
            w.write_sample(q).map_err(|e| io_fail(path, e))?;
        }
    }
    w.finalize().map_err(|e| io_fail(path, e))
}

/// One manifest line as stored on disk. Paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub clip_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proprio_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_cm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_rad: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

/// A validated manifest entry; audio is loaded only on [`ManifestEntry::resolve`].
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub line: usize,
    pub clip_path: PathBuf,
    pub proprio_path: Option<PathBuf>,
    pub label: Option<ContactPoint>,
    pub meta: BTreeMap<String, String>,
}

impl ManifestEntry {
    pub fn resolve(&self) -> Result<EventRecord, AudioError> {
        let clip = read_clip(&self.clip_path)?;
        let proprio = match &self.proprio_path {
            Some(p) => Some(ProprioTrace::read(p)?),
            None => None,
        };
        Ok(EventRecord {
            clip,
            proprio,
            label: self.label,
            metadata: self.meta.clone(),
        })
    }
}

pub fn parse_manifest_row(text: &str, line: usize) -> Result<ManifestRow, AudioError> {
    let row: ManifestRow = serde_json::from_str(text).map_err(|e| AudioError::MalformedRecord {
        line,
        reason: e.to_string(),
    })?;
    if row.clip_path.is_empty() {
        return Err(AudioError::MalformedRecord {
            line,
            reason: "empty clip_path".into(),
        });
    }
    Ok(row)
}

/// Loads a JSON-lines manifest. Blank lines and `#` comments are skipped;
/// every other line must be a well-formed record.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>, AudioError> {
    let base = path.parent().unwrap_or(Path::new("."));
    let f = File::open(path).map_err(|e| io_fail(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line_no = i + 1;
        let text = line.map_err(|e| io_fail(path, e))?;
        let text = text.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let row = parse_manifest_row(text, line_no)?;
        let label = match (row.z_cm, row.theta_rad) {
            (Some(z), Some(t)) => Some(ContactPoint::label(z / 100.0, t).map_err(|e| {
                AudioError::MalformedRecord {
                    line: line_no,
                    reason: e.to_string(),
                }
            })?),
            (None, None) => None,
            _ => {
                return Err(AudioError::MalformedRecord {
                    line: line_no,
                    reason: "label needs both z_cm and theta_rad".into(),
                })
            }
        };
        out.push(ManifestEntry {
            line: line_no,
            clip_path: base.join(&row.clip_path),
            proprio_path: row.proprio_path.as_ref().map(|p| base.join(p)),
            label,
            meta: row.meta,
        });
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<(), AudioError> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r).map_err(|e| io_fail(path, e))?);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| io_fail(path, e))
}
