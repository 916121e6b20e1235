//! Cylindrical surface parameterization and the evaluation metrics built on it.
//!
//! Contact points live on the lateral surface of the end-effector tube and are
//! addressed by height `z` (meters along the axis, origin at the axis midpoint)
//! and azimuth `theta` (radians, canonical range `(-pi, pi]`).

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Half-extent of the labeled band along the cylinder axis.
pub const LABEL_HALF_RANGE_M: f64 = 0.10;

/// Resolution of canonical angles. Wrapping an angle by a multiple of 2*pi in
/// floating point perturbs its last bits; snapping to this grid makes
/// `ContactPoint::new(z, t)` and `ContactPoint::new(z, t + 2*pi)` bit-identical.
const ANGLE_GRID: f64 = 4_294_967_296.0; // 2^32 steps per radian

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point lies on the cylinder axis; azimuth undefined")]
    DegenerateAxisPoint,
    #[error("empty point list")]
    EmptyList,
    #[error("length mismatch: {0} predictions vs {1} ground truths")]
    LengthMismatch(usize, usize),
    #[error("empty point set")]
    Empty,
    #[error("invalid contact point: {0}")]
    InvalidPoint(String),
    #[error("invalid cylinder: {0}")]
    InvalidCylinder(String),
}

/// Maps an angle onto `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta % (2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    } else if t <= -PI {
        t += 2.0 * PI;
    }
    t
}

/// Wrapped angle snapped to the canonical grid. `-pi` is stored as `pi`.
pub fn canonical_angle(theta: f64) -> f64 {
    let q = (wrap_angle(theta) * ANGLE_GRID).round() / ANGLE_GRID;
    if q > PI || q <= -PI {
        PI
    } else {
        q
    }
}

/// A point on the lateral cylinder surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactPoint {
    z: f64,
    theta: f64,
}

impl ContactPoint {
    /// Builds a point with canonical azimuth. `z` is not range-checked; use
    /// [`ContactPoint::label`] for ground-truth labels.
    pub fn new(z: f64, theta: f64) -> Self {
        Self {
            z,
            theta: canonical_angle(theta),
        }
    }

    /// A ground-truth label: finite, `|z| <= 0.10 m`, `theta` within `[-pi, pi]`.
    pub fn label(z: f64, theta: f64) -> Result<Self, GeometryError> {
        if !z.is_finite() || !theta.is_finite() {
            return Err(GeometryError::InvalidPoint("non-finite coordinate".into()));
        }
        if z.abs() > LABEL_HALF_RANGE_M + 1e-12 {
            return Err(GeometryError::InvalidPoint(format!(
                "z = {z} m outside [-0.10, 0.10]"
            )));
        }
        if theta.abs() > PI + 1e-12 {
            return Err(GeometryError::InvalidPoint(format!(
                "theta = {theta} rad outside [-pi, pi]"
            )));
        }
        Ok(Self::new(z, theta))
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Same azimuth with `z` clamped into the labeled band.
    pub fn clamped(&self) -> Self {
        Self {
            z: self.z.clamp(-LABEL_HALF_RANGE_M, LABEL_HALF_RANGE_M),
            theta: self.theta,
        }
    }
}

impl fmt::Display for ContactPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(z={:.4} m, theta={:.4} rad)", self.z, self.theta)
    }
}

/// Plain 3D vector used for world-frame positions.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn scale(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn normalized(self) -> Vec3 {
        self.scale(1.0 / self.norm())
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl std::ops::Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl std::ops::Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl std::ops::Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Rigid transform: `world = rotation * local + translation`.
/// `rotation` is row-major and assumed orthonormal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: [[f64; 3]; 3],
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: Vec3::ZERO,
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self {
            translation: t,
            ..Self::identity()
        }
    }

    /// Rotation about the world z axis followed by a translation.
    pub fn from_yaw_translation(yaw: f64, t: Vec3) -> Self {
        let (s, c) = yaw.sin_cos();
        Self {
            rotation: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
            translation: t,
        }
    }

    pub fn rotate(&self, v: Vec3) -> Vec3 {
        let r = &self.rotation;
        Vec3::new(
            r[0][0] * v.x + r[0][1] * v.y + r[0][2] * v.z,
            r[1][0] * v.x + r[1][1] * v.y + r[1][2] * v.z,
            r[2][0] * v.x + r[2][1] * v.y + r[2][2] * v.z,
        )
    }

    pub fn inverse_rotate(&self, v: Vec3) -> Vec3 {
        let r = &self.rotation;
        Vec3::new(
            r[0][0] * v.x + r[1][0] * v.y + r[2][0] * v.z,
            r[0][1] * v.x + r[1][1] * v.y + r[2][1] * v.z,
            r[0][2] * v.x + r[1][2] * v.y + r[2][2] * v.z,
        )
    }

    pub fn apply(&self, local: Vec3) -> Vec3 {
        self.rotate(local) + self.translation
    }

    pub fn apply_inverse(&self, world: Vec3) -> Vec3 {
        self.inverse_rotate(world - self.translation)
    }
}

/// The end-effector tube.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CylinderSpec {
    pub radius: f64,
    pub half_length: f64,
    #[serde(default)]
    pub pose: Pose,
}

impl Default for CylinderSpec {
    /// 4 in radius, 12 in length, identity pose.
    fn default() -> Self {
        Self {
            radius: 0.1016,
            half_length: 0.1524,
            pose: Pose::identity(),
        }
    }
}

impl CylinderSpec {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(GeometryError::InvalidCylinder(format!(
                "radius {} must be positive",
                self.radius
            )));
        }
        if !(self.half_length > 0.0 && self.half_length.is_finite()) {
            return Err(GeometryError::InvalidCylinder(format!(
                "half_length {} must be positive",
                self.half_length
            )));
        }
        Ok(())
    }

    pub fn with_pose(mut self, pose: Pose) -> Self {
        self.pose = pose;
        self
    }

    /// Axis direction in the world frame.
    pub fn axis(&self) -> Vec3 {
        self.pose.rotate(Vec3::new(0.0, 0.0, 1.0))
    }
}

/// Surface point in the world frame.
pub fn to_cartesian(p: &ContactPoint, cyl: &CylinderSpec) -> Vec3 {
    let (s, c) = p.theta().sin_cos();
    cyl.pose
        .apply(Vec3::new(cyl.radius * c, cyl.radius * s, p.z()))
}

/// Radial projection of a world point onto the lateral surface.
pub fn project_to_surface(x: Vec3, cyl: &CylinderSpec) -> Result<ContactPoint, GeometryError> {
    let local = cyl.pose.apply_inverse(x);
    if local.x.hypot(local.y) <= 1e-9 {
        return Err(GeometryError::DegenerateAxisPoint);
    }
    let theta = local.y.atan2(local.x);
    let z = local.z.clamp(-cyl.half_length, cyl.half_length);
    Ok(ContactPoint::new(z, theta))
}

/// Averages mesh intersection points and projects the mean onto the surface.
pub fn label_from_intersections(
    points: &[Vec3],
    cyl: &CylinderSpec,
) -> Result<ContactPoint, GeometryError> {
    if points.is_empty() {
        return Err(GeometryError::EmptyList);
    }
    let sum = points.iter().fold(Vec3::ZERO, |acc, &p| acc + p);
    project_to_surface(sum.scale(1.0 / points.len() as f64), cyl)
}

/// Mean Euclidean (chord) distance between paired predictions and labels.
/// Predictions are clamped into the labeled band first.
pub fn med(
    preds: &[ContactPoint],
    gts: &[ContactPoint],
    cyl: &CylinderSpec,
) -> Result<f64, GeometryError> {
    let d = pointwise_distances(preds, gts, cyl)?;
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

/// Per-pair chord distances used by [`med`] and the evaluation reports.
pub fn pointwise_distances(
    preds: &[ContactPoint],
    gts: &[ContactPoint],
    cyl: &CylinderSpec,
) -> Result<Vec<f64>, GeometryError> {
    if preds.len() != gts.len() {
        return Err(GeometryError::LengthMismatch(preds.len(), gts.len()));
    }
    if preds.is_empty() {
        return Err(GeometryError::Empty);
    }
    Ok(preds
        .iter()
        .zip(gts)
        .map(|(p, g)| to_cartesian(&p.clamped(), cyl).distance(to_cartesian(g, cyl)))
        .collect())
}

/// Height and azimuth components of a prediction error.
pub fn decompose_error(pred: &ContactPoint, gt: &ContactPoint) -> (f64, f64) {
    let height = (pred.clamped().z() - gt.z()).abs();
    let angle = wrap_angle(pred.theta() - gt.theta()).abs();
    (height, angle)
}

/// Shortest path along the lateral surface (unrolled helix). Auxiliary metric.
pub fn geodesic_distance(a: &ContactPoint, b: &ContactPoint, radius: f64) -> f64 {
    let dz = a.z() - b.z();
    let arc = radius * wrap_angle(a.theta() - b.theta());
    dz.hypot(arc)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// ASCII xyz, one point per line, meters.
    pub fn to_xyz(&self) -> String {
        let mut out = String::with_capacity(self.points.len() * 40);
        for p in &self.points {
            out.push_str(&format!("{:.9} {:.9} {:.9}\n", p.x, p.y, p.z));
        }
        out
    }

    pub fn from_xyz(text: &str) -> Result<Self, GeometryError> {
        let mut points = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let v: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|e| GeometryError::InvalidPoint(format!("line {}: {e}", i + 1)))?;
            if v.len() != 3 {
                return Err(GeometryError::InvalidPoint(format!(
                    "line {}: expected 3 values, got {}",
                    i + 1,
                    v.len()
                )));
            }
            points.push(Vec3::new(v[0], v[1], v[2]));
        }
        Ok(Self { points })
    }
}

/// Unidirectional RMS chamfer distance from `pred` to `gt`:
/// `sqrt(mean_{x in pred} min_{y in gt} |x - y|^2)`.
///
/// Uses a uniform grid over `gt`; the nearest-neighbor search is exact, so the
/// result matches [`chamfer_rms_brute_force`] bit for bit.
pub fn chamfer_rms(pred: &PointCloud, gt: &PointCloud) -> Result<f64, GeometryError> {
    if pred.is_empty() || gt.is_empty() {
        return Err(GeometryError::Empty);
    }
    if gt.len() < 64 {
        return chamfer_rms_brute_force(pred, gt);
    }
    let index = GridIndex::build(&gt.points);
    let sum: f64 = pred.points.iter().map(|&x| index.nearest_sq(x)).sum();
    Ok((sum / pred.len() as f64).sqrt())
}

/// O(|pred| * |gt|) reference implementation of [`chamfer_rms`].
pub fn chamfer_rms_brute_force(pred: &PointCloud, gt: &PointCloud) -> Result<f64, GeometryError> {
    if pred.is_empty() || gt.is_empty() {
        return Err(GeometryError::Empty);
    }
    let sum: f64 = pred
        .points
        .iter()
        .map(|&x| {
            gt.points
                .iter()
                .map(|&y| (x - y).norm_sq())
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    Ok((sum / pred.len() as f64).sqrt())
}

/// Uniform voxel grid for exact nearest-neighbor queries.
struct GridIndex<'a> {
    points: &'a [Vec3],
    origin: Vec3,
    cell: f64,
    dims: [usize; 3],
    // cell -> start offset into `order`
    starts: Vec<usize>,
    order: Vec<usize>,
}

impl<'a> GridIndex<'a> {
    fn build(points: &'a [Vec3]) -> Self {
        let mut lo = points[0];
        let mut hi = points[0];
        for p in points {
            lo = Vec3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
            hi = Vec3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
        }
        let ext = hi - lo;
        let max_ext = ext.x.max(ext.y).max(ext.z);
        let per_axis = (points.len() as f64).cbrt().ceil().max(1.0);
        let cell = if max_ext > 0.0 { max_ext / per_axis } else { 1.0 };
        let dim = |e: f64| (e / cell).floor() as usize + 1;
        let dims = [dim(ext.x), dim(ext.y), dim(ext.z)];
        let n_cells = dims[0] * dims[1] * dims[2];
        let mut counts = vec![0usize; n_cells + 1];
        let cells: Vec<usize> = points
            .iter()
            .map(|&p| Self::cell_of(lo, cell, dims, p))
            .collect();
        for &c in &cells {
            counts[c + 1] += 1;
        }
        for i in 0..n_cells {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut order = vec![0usize; points.len()];
        for (i, &c) in cells.iter().enumerate() {
            order[fill[c]] = i;
            fill[c] += 1;
        }
        Self {
            points,
            origin: lo,
            cell,
            dims,
            starts: counts,
            order,
        }
    }

    fn coord(origin: f64, cell: f64, dim: usize, v: f64) -> usize {
        let c = ((v - origin) / cell).floor();
        if c < 0.0 {
            0
        } else {
            (c as usize).min(dim - 1)
        }
    }

    fn cell_of(origin: Vec3, cell: f64, dims: [usize; 3], p: Vec3) -> usize {
        let ix = Self::coord(origin.x, cell, dims[0], p.x);
        let iy = Self::coord(origin.y, cell, dims[1], p.y);
        let iz = Self::coord(origin.z, cell, dims[2], p.z);
        (ix * dims[1] + iy) * dims[2] + iz
    }

    /// Squared distance to the nearest indexed point.
    fn nearest_sq(&self, q: Vec3) -> f64 {
        let c = [
            Self::coord(self.origin.x, self.cell, self.dims[0], q.x) as isize,
            Self::coord(self.origin.y, self.cell, self.dims[1], q.y) as isize,
            Self::coord(self.origin.z, self.cell, self.dims[2], q.z) as isize,
        ];
        let max_ring = self.dims.iter().copied().max().unwrap_or(1) as isize;
        let mut best = f64::INFINITY;
        for ring in 0..=max_ring {
            // every point outside the shell of radius `ring` around the query's
            // cell is at least `(ring) * cell` away from the query minus the
            // query's offset inside its own cell
            let lower = self.shell_lower_bound(q, c, ring);
            if lower * lower > best {
                break;
            }
            self.visit_shell(c, ring, |idx| {
                let d = (self.points[idx] - q).norm_sq();
                if d < best {
                    best = d;
                }
            });
        }
        best
    }

    /// Lower bound on the distance from `q` to any point in cells at Chebyshev
    /// ring distance `ring` from `c`.
    fn shell_lower_bound(&self, q: Vec3, c: [isize; 3], ring: isize) -> f64 {
        if ring == 0 {
            return 0.0;
        }
        let qa = q.to_array();
        let oa = self.origin.to_array();
        let mut bound = f64::INFINITY;
        for axis in 0..3 {
            // distance from q to the inner faces of the shell along this axis
            let lo_face = oa[axis] + (c[axis] - ring + 1) as f64 * self.cell;
            let hi_face = oa[axis] + (c[axis] + ring) as f64 * self.cell;
            let d = (qa[axis] - lo_face).min(hi_face - qa[axis]);
            bound = bound.min(d.max(0.0));
        }
        bound
    }

    fn visit_shell(&self, c: [isize; 3], ring: isize, mut f: impl FnMut(usize)) {
        let d = self.dims.map(|v| v as isize);
        for ix in (c[0] - ring).max(0)..=(c[0] + ring).min(d[0] - 1) {
            for iy in (c[1] - ring).max(0)..=(c[1] + ring).min(d[1] - 1) {
                for iz in (c[2] - ring).max(0)..=(c[2] + ring).min(d[2] - 1) {
                    let on_shell = (ix - c[0]).abs() == ring
                        || (iy - c[1]).abs() == ring
                        || (iz - c[2]).abs() == ring;
                    if !on_shell {
                        continue;
                    }
                    let cell = ((ix * d[1] + iy) * d[2] + iz) as usize;
                    for &idx in &self.order[self.starts[cell]..self.starts[cell + 1]] {
                        f(idx);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cyl() -> CylinderSpec {
        CylinderSpec::default()
    }

    #[test]
    fn to_cartesian_reference_points() {
        let p = to_cartesian(&ContactPoint::new(0.0, 0.0), &cyl());
        assert!((p - Vec3::new(0.1016, 0.0, 0.0)).norm() < 1e-12);
        let p = to_cartesian(&ContactPoint::new(0.05, PI), &cyl());
        assert!((p - Vec3::new(-0.1016, 0.0, 0.05)).norm() < 1e-12);
    }

    #[test]
    fn projection_examples() {
        let c = cyl();
        let p = project_to_surface(Vec3::new(0.2, 0.0, 0.03), &c).unwrap();
        assert_eq!((p.z(), p.theta()), (0.03, 0.0));
        assert_eq!(
            project_to_surface(Vec3::new(0.0, 0.0, 0.05), &c),
            Err(GeometryError::DegenerateAxisPoint)
        );
        let p = project_to_surface(Vec3::new(0.1, 0.1, 0.0), &c).unwrap();
        assert!((p.theta() - PI / 4.0).abs() < 1e-9);
        let p = project_to_surface(Vec3::new(0.1, 0.0, 0.4), &c).unwrap();
        assert_eq!(p.z(), c.half_length);
    }

    #[test]
    fn pi_and_minus_pi_are_identified() {
        assert_eq!(ContactPoint::new(0.0, -PI).theta(), PI);
        assert_eq!(ContactPoint::new(0.0, PI).theta(), PI);
        assert_eq!(ContactPoint::new(0.0, 3.0 * PI).theta(), PI);
    }

    #[test]
    fn label_validation() {
        assert!(ContactPoint::label(0.05, 1.0).is_ok());
        assert!(ContactPoint::label(0.11, 1.0).is_err());
        assert!(ContactPoint::label(0.0, 4.0).is_err());
        assert!(ContactPoint::label(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn label_from_intersections_cases() {
        let c = cyl();
        assert_eq!(
            label_from_intersections(&[], &c),
            Err(GeometryError::EmptyList)
        );
        let x = Vec3::new(0.3, 0.2, 0.01);
        assert_eq!(
            label_from_intersections(&[x], &c).unwrap(),
            project_to_surface(x, &c).unwrap()
        );
        let pts = [Vec3::new(0.1, 0.05, 0.02), Vec3::new(0.1, -0.05, 0.02)];
        assert_eq!(label_from_intersections(&pts, &c).unwrap().theta(), 0.0);
    }

    #[test]
    fn label_from_noisy_cluster() {
        use rand::{Rng, SeedableRng};
        let c = cyl();
        let truth = ContactPoint::new(0.042, -2.1);
        let center = to_cartesian(&truth, &c);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Vec3> = (0..400)
            .map(|_| {
                // uniform in a 1 mm ball
                loop {
                    let v = Vec3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    );
                    if v.norm() <= 1.0 {
                        return center + v.scale(1e-3);
                    }
                }
            })
            .collect();
        let got = label_from_intersections(&pts, &c).unwrap();
        let (dz, dth) = decompose_error(&got, &truth);
        assert!(dz < 1e-3);
        assert!(dth < 0.6f64.to_radians());
    }

    #[test]
    fn med_examples() {
        let c = cyl();
        let a = [ContactPoint::new(0.0, 0.0)];
        let b = [ContactPoint::new(0.0, PI)];
        assert_eq!(med(&a, &a, &c).unwrap(), 0.0);
        assert!((med(&a, &b, &c).unwrap() - 0.2032).abs() < 1e-12);
        assert_eq!(med(&a, &[], &c), Err(GeometryError::LengthMismatch(1, 0)));
        assert_eq!(med(&[], &[], &c), Err(GeometryError::Empty));
    }

    #[test]
    fn med_clamps_predictions() {
        let c = cyl();
        let pred = [ContactPoint::new(0.5, 0.0)];
        let gt = [ContactPoint::new(0.10, 0.0)];
        assert!(med(&pred, &gt, &c).unwrap() < 1e-12);
    }

    #[test]
    fn decompose_error_wraps() {
        let (h, a) = decompose_error(
            &ContactPoint::new(0.0, PI - 0.01),
            &ContactPoint::new(0.0, -PI + 0.01),
        );
        assert_eq!(h, 0.0);
        assert!((a - 0.02).abs() < 1e-9);
        let p = ContactPoint::new(0.03, 1.0);
        assert_eq!(decompose_error(&p, &p), (0.0, 0.0));
        let (_, a) = decompose_error(&ContactPoint::new(0.0, PI / 2.0), &ContactPoint::new(0.0, 0.0));
        assert!((a - PI / 2.0).abs() < 1e-9);
    }

    #[test]
    fn chamfer_examples() {
        let o = PointCloud::new(vec![Vec3::ZERO]);
        let one = PointCloud::new(vec![Vec3::new(1.0, 0.0, 0.0)]);
        let wide = PointCloud::new(vec![Vec3::ZERO, Vec3::new(5.0, 0.0, 0.0)]);
        assert_eq!(chamfer_rms(&o, &o).unwrap(), 0.0);
        assert_eq!(chamfer_rms(&one, &o).unwrap(), 1.0);
        assert_eq!(chamfer_rms(&o, &wide).unwrap(), 0.0);
        // asymmetry: the reverse direction pays for the far point
        assert!(chamfer_rms(&wide, &o).unwrap() > 0.0);
        assert_eq!(chamfer_rms(&PointCloud::default(), &o), Err(GeometryError::Empty));
    }

    #[test]
    fn xyz_round_trip() {
        let c = PointCloud::new(vec![Vec3::new(0.1, -0.2, 0.3), Vec3::new(1.5, 2.0, -3.25)]);
        let back = PointCloud::from_xyz(&c.to_xyz()).unwrap();
        assert_eq!(back, c);
        assert!(PointCloud::from_xyz("1 2\n").is_err());
    }

    fn arb_point() -> impl Strategy<Value = ContactPoint> {
        (-0.1524f64..0.1524, -PI..PI).prop_map(|(z, t)| ContactPoint::new(z, t))
    }

    fn arb_cloud(max: usize) -> impl Strategy<Value = PointCloud> {
        prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -0.2f64..0.2), 1..max).prop_map(|v| {
            PointCloud::new(v.into_iter().map(|(x, y, z)| Vec3::new(x, y, z)).collect())
        })
    }

    proptest! {
        #[test]
        fn cartesian_round_trip(p in arb_point(), yaw in -PI..PI, tx in -1.0f64..1.0) {
            let c = cyl().with_pose(Pose::from_yaw_translation(yaw, Vec3::new(tx, 0.3, -0.2)));
            let back = project_to_surface(to_cartesian(&p, &c), &c).unwrap();
            prop_assert!((back.z() - p.z()).abs() < 1e-9);
            prop_assert!(wrap_angle(back.theta() - p.theta()).abs() < 1e-9);
        }

        #[test]
        fn error_bounds(a in arb_point(), b in arb_point()) {
            let (h, t) = decompose_error(&a, &b);
            prop_assert!(t <= PI);
            prop_assert!(h <= 2.0 * cyl().half_length);
        }

        #[test]
        fn med_is_symmetric_and_triangular(a in arb_point(), b in arb_point(), c in arb_point()) {
            let cy = cyl();
            let (a, b, c) = (a.clamped(), b.clamped(), c.clamped());
            let ab = med(&[a], &[b], &cy).unwrap();
            let ba = med(&[b], &[a], &cy).unwrap();
            let bc = med(&[b], &[c], &cy).unwrap();
            let ac = med(&[a], &[c], &cy).unwrap();
            prop_assert!((ab - ba).abs() < 1e-15);
            prop_assert!(ac <= ab + bc + 1e-12);
        }

        #[test]
        fn chamfer_matches_brute_force(p in arb_cloud(150), g in arb_cloud(200)) {
            prop_assert_eq!(chamfer_rms(&p, &g).unwrap(), chamfer_rms_brute_force(&p, &g).unwrap());
            prop_assert_eq!(chamfer_rms(&g, &g).unwrap(), 0.0);
        }

        #[test]
        fn canonical_wrap_is_exact(t in -PI..PI) {
            let a = ContactPoint::new(0.0, t);
            prop_assert_eq!(a, ContactPoint::new(0.0, t + 2.0 * PI));
            prop_assert_eq!(a, ContactPoint::new(0.0, t - 2.0 * PI));
        }
    }
}
