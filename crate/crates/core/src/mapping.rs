//! Haptic mapping of a hidden branch: plan strikes in a plane around the scene,
//! sweep the tube until it touches a capsule, synthesize the collision, keep
//! events above an amplitude threshold, and score the resulting point map.
//!
//! Motion is kinematic: the tube translates along the strike direction until
//! first contact; speed only scales the excitation. Predicted surface points
//! are mapped to the world frame with the tube pose at contact time.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{chamfer_rms, to_cartesian, ContactPoint, CylinderSpec, GeometryError, PointCloud, Pose, Vec3, LABEL_HALF_RANGE_M};
use crate::localize::{LocalizeError, Localizer};
use crate::simulate::{child_seed, synth_event_with, synth_reference_noise, EventOptions, LeafNoise, Mode, ModalProfile, SensorLayout, SimConfig, SimError, StrikeSpec};

#[derive(Debug, Error)]
pub enum MappingError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("no strike position clears the scene")]
    NoValidPoses,
    #[error("nothing to score: empty point set")]
    Empty,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Localize(#[from] LocalizeError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// A segment with a radius: all points within `radius` of `[a, b]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Capsule {
    pub a: Vec3,
    pub b: Vec3,
    pub radius: f64,
}

impl Capsule {
    pub fn at(&self, t: f64) -> Vec3 {
        self.a + (self.b - self.a).scale(t)
    }

    /// Parameter of the axis point closest to `p`.
    pub fn project(&self, p: Vec3) -> f64 {
        let ab = self.b - self.a;
        let len2 = ab.norm_sq();
        if len2 == 0.0 {
            0.0
        } else {
            ((p - self.a).dot(ab) / len2).clamp(0.0, 1.0)
        }
    }

    /// Signed distance from `p` to the capsule surface (negative inside).
    pub fn distance(&self, p: Vec3) -> f64 {
        p.distance(self.at(self.project(p))) - self.radius
    }
}

/// Rectangle in a horizontal plane from which strike start positions are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlane {
    pub height: f64,
    pub x: (f64, f64),
    pub y: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BranchScene {
    pub segments: Vec<Capsule>,
    /// Leaf rustling mixed into every strike on this scene.
    pub leaf: LeafNoise,
    pub profile: ModalProfile,
    pub plane: SamplingPlane,
    /// Strike speed range, m/s.
    pub speed: (f64, f64),
    /// A strike that travels this far without contact is a miss.
    pub max_travel: f64,
}

impl Default for BranchScene {
    /// Three joined segments spreading roughly horizontally around the origin.
    fn default() -> Self {
        Self {
            segments: vec![
                Capsule { a: Vec3::new(-0.26, -0.06, -0.03), b: Vec3::new(0.26, 0.06, 0.03), radius: 0.02 },
                Capsule { a: Vec3::new(0.04, 0.01, 0.005), b: Vec3::new(0.12, 0.26, 0.05), radius: 0.015 },
                Capsule { a: Vec3::new(-0.06, -0.015, -0.005), b: Vec3::new(-0.16, -0.26, -0.045), radius: 0.012 },
            ],
            leaf: LeafNoise::default(),
            profile: ModalProfile {
                modes: vec![
                    Mode { frequency: 340.0, damping: 16.0, amplitude: 0.9 },
                    Mode { frequency: 930.0, damping: 24.0, amplitude: 0.4 },
                    Mode { frequency: 1840.0, damping: 32.0, amplitude: 0.25 },
                    Mode { frequency: 3050.0, damping: 40.0, amplitude: 0.18 },
                ],
                impact_width_s: 3.0e-4,
            },
            plane: SamplingPlane { height: 0.0, x: (-0.5, 0.5), y: (-0.5, 0.5) },
            speed: (0.1, 0.4),
            max_travel: 0.6,
        }
    }
}

impl BranchScene {
    pub fn validate(&self) -> Result<(), MappingError> {
        let bad = |m: String| Err(MappingError::InvalidScene(m));
        if self.segments.is_empty() {
            return bad("at least one segment is required".into());
        }
        for (i, s) in self.segments.iter().enumerate() {
            if !(s.radius > 0.0 && s.radius.is_finite()) {
                return bad(format!("segment {i} radius must be positive"));
            }
            if ![s.a, s.b].iter().all(|p| p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
                return bad(format!("segment {i} has a non-finite endpoint"));
            }
        }
        let p = &self.plane;
        if !(p.x.1 >= p.x.0 && p.y.1 >= p.y.0 && p.height.is_finite()) {
            return bad("sampling plane bounds are inverted".into());
        }
        if !(self.speed.0 > 0.0 && self.speed.1 >= self.speed.0) {
            return bad("speed range must be positive".into());
        }
        if !(self.max_travel > 0.0) {
            return bad("max_travel must be positive".into());
        }
        self.profile.validate()?;
        Ok(())
    }

    /// Signed distance from `p` to the union of the capsules.
    pub fn distance(&self, p: Vec3) -> f64 {
        self.segments.iter().map(|c| c.distance(p)).fold(f64::INFINITY, f64::min)
    }

    /// Points on the union surface with spacing at most `spacing` along both
    /// surface directions. Points buried inside another capsule are dropped.
    pub fn surface_samples(&self, spacing: f64) -> PointCloud {
        let mut pts = Vec::new();
        for (i, c) in self.segments.iter().enumerate() {
            for p in capsule_surface(c, spacing) {
                let buried = self.segments.iter().enumerate().any(|(j, o)| j != i && o.distance(p) < -1e-9);
                if !buried {
                    pts.push(p);
                }
            }
        }
        PointCloud::new(pts)
    }
}

/// Two unit vectors completing `u` to an orthonormal frame.
fn frame(u: Vec3) -> (Vec3, Vec3) {
    let helper = if u.x.abs() < 0.9 { Vec3::new(1.0, 0.0, 0.0) } else { Vec3::new(0.0, 1.0, 0.0) };
    let e1 = u.cross(helper).normalized();
    (e1, u.cross(e1))
}

fn capsule_surface(c: &Capsule, h: f64) -> Vec<Vec3> {
    let ab = c.b - c.a;
    let len = ab.norm();
    let u = if len > 0.0 { ab.scale(1.0 / len) } else { Vec3::new(0.0, 0.0, 1.0) };
    let (e1, e2) = frame(u);
    let ring = |center: Vec3, r: f64, out: &mut Vec<Vec3>| {
        let n = ((2.0 * PI * r / h).ceil() as usize).max(1);
        for k in 0..n {
            let (s, co) = (2.0 * PI * k as f64 / n as f64).sin_cos();
            out.push(center + e1.scale(r * co) + e2.scale(r * s));
        }
    };
    let mut out = Vec::new();
    let n_len = ((len / h).ceil() as usize).max(1);
    for i in 0..=n_len {
        ring(c.a + ab.scale(i as f64 / n_len as f64), c.radius, &mut out);
    }
    // hemispherical caps, latitude rings from the rim to the pole
    let n_lat = ((0.5 * PI * c.radius / h).ceil() as usize).max(1);
    for (end, dir) in [(c.a, -u), (c.b, u)] {
        for k in 1..=n_lat {
            let phi = 0.5 * PI * k as f64 / n_lat as f64;
            let center = end + dir.scale(c.radius * phi.sin());
            let r = c.radius * phi.cos();
            if k == n_lat {
                out.push(center);
            } else {
                ring(center, r, &mut out);
            }
        }
    }
    out
}

/// Distance from `q` to the solid tube and the closest point on it.
fn solid_closest(cyl: &CylinderSpec, q: Vec3) -> (f64, Vec3) {
    let l = cyl.pose.apply_inverse(q);
    let rho = l.x.hypot(l.y);
    let (x, y) = if rho > cyl.radius { (l.x * cyl.radius / rho, l.y * cyl.radius / rho) } else { (l.x, l.y) };
    let z = l.z.clamp(-cyl.half_length, cyl.half_length);
    let c = cyl.pose.apply(Vec3::new(x, y, z));
    (q.distance(c), c)
}

/// Clearance between a capsule and the solid tube (negative when they
/// overlap by more than touching), with the capsule axis parameter attaining it.
pub fn capsule_clearance(c: &Capsule, cyl: &CylinderSpec) -> (f64, f64) {
    // distance to a convex set along a segment is convex in the parameter
    let f = |t: f64| solid_closest(cyl, c.at(t)).0;
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..90 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        }
    }
    let mut best = (f(0.5 * (lo + hi)), 0.5 * (lo + hi));
    for t in [0.0, 1.0] {
        let v = f(t);
        if v < best.0 {
            best = (v, t);
        }
    }
    (best.0 - c.radius, best.1)
}

/// Smallest clearance over all segments, and the index of that segment.
pub fn scene_clearance(scene: &BranchScene, cyl: &CylinderSpec) -> (f64, usize, f64) {
    let mut best = (f64::INFINITY, 0, 0.0);
    for (i, c) in scene.segments.iter().enumerate() {
        let (d, t) = capsule_clearance(c, cyl);
        if d < best.0 {
            best = (d, i, t);
        }
    }
    best
}

/// Tube with its axis orientation kept and its center moved to `center`.
pub fn tube_at(cyl: &CylinderSpec, center: Vec3) -> CylinderSpec {
    cyl.with_pose(Pose { rotation: cyl.pose.rotation, translation: center })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrikePose {
    pub start: Vec3,
    /// One of the four in-plane axis directions.
    pub direction: Vec3,
    pub speed: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StrikePlan {
    pub poses: Vec<StrikePose>,
}

impl StrikePlan {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

pub const STRIKE_DIRECTIONS: [Vec3; 4] = [
    Vec3 { x: 1.0, y: 0.0, z: 0.0 },
    Vec3 { x: -1.0, y: 0.0, z: 0.0 },
    Vec3 { x: 0.0, y: 1.0, z: 0.0 },
    Vec3 { x: 0.0, y: -1.0, z: 0.0 },
];

/// Draws `n` start positions uniformly in the scene's sampling plane, drops
/// those where the tube would overlap a segment, and strikes each survivor in
/// the four axis directions.
pub fn plan_strikes(scene: &BranchScene, cyl: &CylinderSpec, n: usize, seed: u64) -> Result<StrikePlan, MappingError> {
    scene.validate()?;
    if n == 0 {
        return Err(MappingError::InvalidScene("number of positions must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(seed, 30, 0));
    let p = scene.plane;
    let draw = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..hi) } else { lo };
    let mut poses = Vec::with_capacity(4 * n);
    for _ in 0..n {
        let start = Vec3::new(draw(&mut rng, p.x), draw(&mut rng, p.y), p.height);
        let clear = scene_clearance(scene, &tube_at(cyl, start)).0 > 0.0;
        for d in STRIKE_DIRECTIONS {
            let speed = draw(&mut rng, scene.speed);
            if clear {
                poses.push(StrikePose { start, direction: d, speed });
            }
        }
    }
    if poses.is_empty() {
        return Err(MappingError::NoValidPoses);
    }
    Ok(StrikePlan { poses })
}

/// Result of sweeping one strike.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sweep {
    Miss,
    Contact {
        travel: f64,
        segment: usize,
        /// Touching point, world frame.
        point: Vec3,
        /// Position on the tube surface; `None` when the touch is on an end
        /// cap or outside the instrumented band.
        local: Option<ContactPoint>,
    },
}

const CONTACT_TOL: f64 = 1e-12;
/// Smallest advance while marching; contacts shallower than this can be missed.
const MIN_STEP: f64 = 1e-4;

/// Translates the tube from `pose.start` along `pose.direction` until it first
/// touches a segment. Clearance is 1-Lipschitz in the travel distance, so
/// advancing by the current clearance never passes through a segment.
pub fn sweep(scene: &BranchScene, cyl: &CylinderSpec, pose: &StrikePose) -> Sweep {
    let at = |s: f64| tube_at(cyl, pose.start + pose.direction.scale(s));
    let clearance = |s: f64| scene_clearance(scene, &at(s)).0;
    let mut prev = 0.0;
    let mut s = 0.0;
    let hit = loop {
        let f = clearance(s);
        if f <= 0.0 {
            break s;
        }
        if s >= scene.max_travel {
            return Sweep::Miss;
        }
        prev = s;
        s = (s + f.max(MIN_STEP)).min(scene.max_travel);
    };
    let (mut lo, mut hi) = (prev, hit);
    if hi > 0.0 {
        while hi - lo > CONTACT_TOL {
            let mid = 0.5 * (lo + hi);
            if clearance(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    let tube = at(hi);
    let (_, segment, t) = scene_clearance(scene, &tube);
    let axis_pt = scene.segments[segment].at(t);
    let (_, point) = solid_closest(&tube, axis_pt);
    let l = tube.pose.apply_inverse(point);
    let lateral = l.z.abs() < cyl.half_length && (l.x.hypot(l.y) - cyl.radius).abs() < 1e-9;
    let local = (lateral && l.z.abs() <= LABEL_HALF_RANGE_M).then(|| ContactPoint::new(l.z, l.y.atan2(l.x)));
    Sweep::Contact { travel: hi, segment, point, local }
}

/// Sensor layout, tube and simulator used for mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct Rig {
    pub layout: SensorLayout,
    pub cylinder: CylinderSpec,
    pub sim: SimConfig,
}

/// RMS of a collision-free recording, over all channels.
pub fn noise_floor_rms(rig: &Rig, seed: u64) -> Result<f64, MappingError> {
    let clip = synth_reference_noise(&rig.layout, &rig.cylinder, &rig.sim, 2.0, seed)?;
    let (mut ss, mut n) = (0.0, 0usize);
    for c in clip.channels() {
        ss += c.iter().map(|&v| (v as f64).powi(2)).sum::<f64>();
        n += c.len();
    }
    Ok((ss / n as f64).sqrt())
}

/// Acceptance threshold: a multiple of the noise floor.
pub const DEFAULT_THRESHOLD_FACTOR: f64 = 6.0;

pub fn default_threshold(rig: &Rig, seed: u64) -> Result<f64, MappingError> {
    Ok(DEFAULT_THRESHOLD_FACTOR * noise_floor_rms(rig, seed)?)
}

/// One accepted strike.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MappedEvent {
    pub strike: usize,
    pub peak: f64,
    pub truth: ContactPoint,
    pub predicted: ContactPoint,
    pub truth_world: Vec3,
    pub predicted_world: Vec3,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MappingOutcome {
    pub planned: usize,
    pub misses: usize,
    /// Touches on a cap or outside the instrumented band.
    pub out_of_band: usize,
    pub below_threshold: usize,
    pub threshold: f64,
    pub events: Vec<MappedEvent>,
}

impl MappingOutcome {
    pub fn contacts(&self) -> usize {
        self.events.len() + self.below_threshold
    }

    pub fn predicted(&self) -> PointCloud {
        PointCloud::new(self.events.iter().map(|e| e.predicted_world).collect())
    }

    pub fn truth(&self) -> PointCloud {
        PointCloud::new(self.events.iter().map(|e| e.truth_world).collect())
    }
}

/// Runs every planned strike. Strike `i` uses its own child seed, so the
/// outcome does not depend on evaluation order.
pub fn execute_mapping(
    plan: &StrikePlan,
    scene: &BranchScene,
    localizer: &dyn Localizer,
    rig: &Rig,
    threshold: f64,
    seed: u64,
) -> Result<MappingOutcome, MappingError> {
    scene.validate()?;
    let mut out = MappingOutcome { planned: plan.len(), threshold, ..Default::default() };
    let opts = EventOptions { leaf: Some(scene.leaf), stationary: false };
    for (i, pose) in plan.poses.iter().enumerate() {
        let (travel, point, local) = match sweep(scene, &rig.cylinder, pose) {
            Sweep::Miss => {
                out.misses += 1;
                continue;
            }
            Sweep::Contact { local: None, .. } => {
                out.out_of_band += 1;
                continue;
            }
            Sweep::Contact { travel, point, local: Some(l), .. } => (travel, point, l),
        };
        let strike = StrikeSpec { contact: local, direction: pose.direction, speed: pose.speed, rod_profile: scene.profile.clone() };
        let event = synth_event_with(&strike, &rig.layout, &rig.cylinder, &rig.sim, child_seed(seed, 31, i as u64), &opts)?;
        let peak = event.clip.peak_amplitude() as f64;
        if peak < threshold {
            out.below_threshold += 1;
            continue;
        }
        let predicted = localizer.locate(&event)?.clamped();
        let tube = tube_at(&rig.cylinder, pose.start + pose.direction.scale(travel));
        out.events.push(MappedEvent {
            strike: i,
            peak,
            truth: local,
            predicted,
            truth_world: point,
            predicted_world: to_cartesian(&predicted, &tube),
        });
    }
    Ok(out)
}

/// Chamfer of the predicted map against the scene surface, and mean distance
/// between each prediction and its true contact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapScore {
    pub chamfer_rms: f64,
    pub med: f64,
}

/// Surface sampling used for scoring, meters.
pub const SURFACE_SPACING: f64 = 0.001;

pub fn score_map(predicted: &PointCloud, surface: &PointCloud, truth: &PointCloud) -> Result<MapScore, MappingError> {
    if predicted.is_empty() {
        return Err(MappingError::Empty);
    }
    if truth.len() != predicted.len() {
        return Err(GeometryError::LengthMismatch(predicted.len(), truth.len()).into());
    }
    let chamfer = chamfer_rms(predicted, surface)?;
    let med = predicted.points.iter().zip(&truth.points).map(|(p, t)| p.distance(*t)).sum::<f64>() / predicted.len() as f64;
    Ok(MapScore { chamfer_rms: chamfer, med })
}

/// Copy of the cloud in lexicographic order, for stable serialization.
pub fn sorted(cloud: &PointCloud) -> PointCloud {
    let mut pts = cloud.points.clone();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)).then(a.z.total_cmp(&b.z)));
    PointCloud::new(pts)
}

/// Counts, threshold and metrics as `key = value` lines.
pub fn report_text(outcome: &MappingOutcome, score: Option<&MapScore>) -> String {
    let mut s = String::new();
    s.push_str(&format!("planned = {}\n", outcome.planned));
    s.push_str(&format!("misses = {}\n", outcome.misses));
    s.push_str(&format!("out_of_band = {}\n", outcome.out_of_band));
    s.push_str(&format!("below_threshold = {}\n", outcome.below_threshold));
    s.push_str(&format!("accepted = {}\n", outcome.events.len()));
    s.push_str(&format!("threshold = {:.6e}\n", outcome.threshold));
    match score {
        Some(m) => {
            s.push_str(&format!("chamfer_rms_cm = {:.4}\n", m.chamfer_rms * 100.0));
            s.push_str(&format!("med_cm = {:.4}\n", m.med * 100.0));
        }
        None => {
            s.push_str("chamfer_rms_cm = nan\n");
            s.push_str("med_cm = nan\n");
        }
    }
    s
}

/// Per accepted event: strike index, peak, true and predicted world points.
pub fn events_csv(outcome: &MappingOutcome) -> String {
    let mut s = String::from("strike,peak,true_x,true_y,true_z,pred_x,pred_y,pred_z\n");
    for e in &outcome.events {
        let (t, p) = (e.truth_world, e.predicted_world);
        s.push_str(&format!(
            "{},{:.6e},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            e.strike, e.peak, t.x, t.y, t.z, p.x, p.y, p.z
        ));
    }
    s
}
