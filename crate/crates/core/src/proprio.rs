//! End-effector trajectory samples that accompany an audio window.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;

#[derive(Debug, Error)]
pub enum ProprioError {
    #[error("proprio trace must contain at least one sample")]
    Empty,
    #[error("timestamps must be strictly increasing (sample {0})")]
    NonMonotonic(usize),
    #[error("non-finite value in sample {0}")]
    NonFinite(usize),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProprioSample {
    /// Seconds relative to the center of the audio window.
    pub t: f64,
    pub position: Vec3,
    /// Unit quaternion `(w, x, y, z)`.
    pub orientation: [f64; 4],
    pub velocity: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProprioTrace {
    samples: Vec<ProprioSample>,
}

const CSV_HEADER: &str = "t,px,py,pz,qw,qx,qy,qz,vx,vy,vz";

impl ProprioTrace {
    pub fn new(samples: Vec<ProprioSample>) -> Result<Self, ProprioError> {
        if samples.is_empty() {
            return Err(ProprioError::Empty);
        }
        for (i, s) in samples.iter().enumerate() {
            let vals = [
                s.t,
                s.position.x,
                s.position.y,
                s.position.z,
                s.velocity.x,
                s.velocity.y,
                s.velocity.z,
            ];
            if vals.iter().chain(&s.orientation).any(|v| !v.is_finite()) {
                return Err(ProprioError::NonFinite(i));
            }
            if i > 0 && s.t <= samples[i - 1].t {
                return Err(ProprioError::NonMonotonic(i));
            }
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[ProprioSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Linear interpolation of position and velocity at time `t`, clamped to
    /// the trace's time span.
    pub fn interpolate(&self, t: f64) -> (Vec3, Vec3) {
        let s = &self.samples;
        if t <= s[0].t {
            return (s[0].position, s[0].velocity);
        }
        let last = s[s.len() - 1];
        if t >= last.t {
            return (last.position, last.velocity);
        }
        let hi = s.partition_point(|x| x.t <= t);
        let (a, b) = (s[hi - 1], s[hi]);
        let w = (t - a.t) / (b.t - a.t);
        let lerp = |p: Vec3, q: Vec3| p + (q - p).scale(w);
        (lerp(a.position, b.position), lerp(a.velocity, b.velocity))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for s in &self.samples {
            let q = s.orientation;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                s.t,
                s.position.x,
                s.position.y,
                s.position.z,
                q[0],
                q[1],
                q[2],
                q[3],
                s.velocity.x,
                s.velocity.y,
                s.velocity.z
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, ProprioError> {
        let mut samples = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('t') || line.starts_with('#') {
                continue;
            }
            let v: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| ProprioError::Parse {
                    line: i + 1,
                    reason: e.to_string(),
                })?;
            if v.len() != 11 {
                return Err(ProprioError::Parse {
                    line: i + 1,
                    reason: format!("expected 11 fields, got {}", v.len()),
                });
            }
            samples.push(ProprioSample {
                t: v[0],
                position: Vec3::new(v[1], v[2], v[3]),
                orientation: [v[4], v[5], v[6], v[7]],
                velocity: Vec3::new(v[8], v[9], v[10]),
            });
        }
        Self::new(samples)
    }

    pub fn read(path: &Path) -> Result<Self, ProprioError> {
        let text = fs::read_to_string(path).map_err(|source| ProprioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_csv(&text)
    }

    pub fn write(&self, path: &Path) -> Result<(), ProprioError> {
        fs::write(path, self.to_csv()).map_err(|source| ProprioError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(t: f64, x: f64) -> ProprioSample {
        ProprioSample {
            t,
            position: Vec3::new(x, 0.0, 0.0),
            orientation: [1.0, 0.0, 0.0, 0.0],
            velocity: Vec3::new(1.0, 0.0, 0.0),
        }
    }

    #[test]
    fn rejects_non_monotonic_time() {
        let r = ProprioTrace::new(vec![sample(0.0, 0.0), sample(0.0, 1.0)]);
        assert!(matches!(r, Err(ProprioError::NonMonotonic(1))));
        assert!(matches!(ProprioTrace::new(vec![]), Err(ProprioError::Empty)));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let tr = ProprioTrace::new(vec![sample(-0.5, 0.1), sample(0.25, 0.3 + 1e-17)]).unwrap();
        assert_eq!(ProprioTrace::from_csv(&tr.to_csv()).unwrap(), tr);
    }

    #[test]
    fn interpolation_midpoint() {
        let tr = ProprioTrace::new(vec![sample(0.0, 0.0), sample(1.0, 2.0)]).unwrap();
        assert_eq!(tr.interpolate(0.5).0.x, 1.0);
        assert_eq!(tr.interpolate(-3.0).0.x, 0.0);
        assert_eq!(tr.interpolate(9.0).0.x, 2.0);
    }
}
