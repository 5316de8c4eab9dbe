//! Planar geometry: SE(2) poses, body footprints, the perceptual frustum test
//! and swept disc collisions along polylines.
//!
//! Every function here is pure and works on plain values, so it can be called
//! from any agent thread.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default arc-length increment for swept collision checks (meters).
pub const DEFAULT_COLLISION_STEP: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("empty path")]
    EmptyPath,
    #[error("swept collision requires a circular mover")]
    NonCircularMover,
    #[error("step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("invalid frustum: {0}")]
    InvalidFrustum(String),
}

/// Wraps an angle into (-π, π].
pub fn normalize_angle(angle: f64) -> f64 {
    if !angle.is_finite() {
        return angle;
    }
    let mut a = angle % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_polar(length: f64, angle: f64) -> Self {
        Self::new(length * angle.cos(), length * angle.sin())
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    /// Turned counterclockwise by `angle` radians.
    pub fn rotated(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    /// Unit vector in the same direction, or `None` for a (near) zero vector.
    pub fn normalized(self) -> Option<Vec2> {
        let n = self.norm();
        (n > 1e-12).then(|| self * (1.0 / n))
    }

    /// Rescales the vector so its length does not exceed `max_len`.
    pub fn clamp_norm(self, max_len: f64) -> Vec2 {
        let n = self.norm();
        if n > max_len && n > 0.0 {
            self * (max_len / n)
        } else {
            self
        }
    }

    pub fn rotate(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn lerp(self, other: Vec2, t: f64) -> Vec2 {
        self + (other - self) * t
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// A rigid transform in the plane. `theta` is kept in (-π, π].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Default for Pose2 {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Pose2 {
    pub const IDENTITY: Pose2 = Pose2 {
        x: 0.0,
        y: 0.0,
        theta: 0.0,
    };

    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub fn from_position(p: Vec2, theta: f64) -> Self {
        Self::new(p.x, p.y, theta)
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    /// `self ∘ other`: `other` expressed in the frame of `self`.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let p = self.transform_point(other.position());
        Pose2::new(p.x, p.y, self.theta + other.theta)
    }

    pub fn inverse(&self) -> Pose2 {
        let p = (-self.position()).rotate(-self.theta);
        Pose2::new(p.x, p.y, -self.theta)
    }

    /// Maps a point from this pose's local frame into the parent frame.
    pub fn transform_point(&self, local: Vec2) -> Vec2 {
        local.rotate(self.theta) + self.position()
    }

    /// Maps a parent-frame point into this pose's local frame.
    pub fn inverse_transform_point(&self, world: Vec2) -> Vec2 {
        (world - self.position()).rotate(-self.theta)
    }

    pub fn distance(&self, other: &Pose2) -> f64 {
        self.position().distance(other.position())
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }
}

/// Planar footprint of a body, in the body's own frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Footprint {
    Circle { radius: f64 },
    Box { half_x: f64, half_y: f64 },
}

/// A footprint plus the height of the body's top above the floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    pub footprint: Footprint,
    pub height: f64,
}

impl Shape {
    pub fn new(footprint: Footprint, height: f64) -> Result<Self, GeometryError> {
        let extents_ok = match footprint {
            Footprint::Circle { radius } => radius > 0.0 && radius.is_finite(),
            Footprint::Box { half_x, half_y } => {
                half_x > 0.0 && half_y > 0.0 && half_x.is_finite() && half_y.is_finite()
            }
        };
        if !extents_ok {
            return Err(GeometryError::InvalidShape(format!(
                "extents must be strictly positive: {footprint:?}"
            )));
        }
        if !(height >= 0.0 && height.is_finite()) {
            return Err(GeometryError::InvalidShape(format!(
                "height must be >= 0, got {height}"
            )));
        }
        Ok(Self { footprint, height })
    }

    pub fn circle(radius: f64, height: f64) -> Result<Self, GeometryError> {
        Self::new(Footprint::Circle { radius }, height)
    }

    pub fn rect(half_x: f64, half_y: f64, height: f64) -> Result<Self, GeometryError> {
        Self::new(Footprint::Box { half_x, half_y }, height)
    }

    pub fn circle_radius(&self) -> Option<f64> {
        match self.footprint {
            Footprint::Circle { radius } => Some(radius),
            Footprint::Box { .. } => None,
        }
    }

    /// Radius of the smallest origin-centred disc containing the footprint.
    pub fn bounding_radius(&self) -> f64 {
        match self.footprint {
            Footprint::Circle { radius } => radius,
            Footprint::Box { half_x, half_y } => half_x.hypot(half_y),
        }
    }

    /// The same body with every planar extent multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Shape {
        let footprint = match self.footprint {
            Footprint::Circle { radius } => Footprint::Circle {
                radius: radius * factor,
            },
            Footprint::Box { half_x, half_y } => Footprint::Box {
                half_x: half_x * factor,
                half_y: half_y * factor,
            },
        };
        Shape {
            footprint,
            height: self.height,
        }
    }

    /// Closest point of the footprint (placed at `pose`) to `point`.
    /// Returns `point` itself when it lies inside the footprint.
    pub fn closest_point(&self, pose: &Pose2, point: Vec2) -> Vec2 {
        match self.footprint {
            Footprint::Circle { radius } => {
                let d = point - pose.position();
                let n = d.norm();
                if n <= radius {
                    point
                } else {
                    pose.position() + d * (radius / n)
                }
            }
            Footprint::Box { half_x, half_y } => {
                let local = pose.inverse_transform_point(point);
                let clamped = Vec2::new(local.x.clamp(-half_x, half_x), local.y.clamp(-half_y, half_y));
                pose.transform_point(clamped)
            }
        }
    }

    /// Euclidean distance from `point` to the footprint; zero inside.
    pub fn distance_to_point(&self, pose: &Pose2, point: Vec2) -> f64 {
        match self.footprint {
            Footprint::Circle { radius } => (point.distance(pose.position()) - radius).max(0.0),
            Footprint::Box { .. } => point.distance(self.closest_point(pose, point)),
        }
    }

    /// Point `clearance` meters outside the footprint, nearest to `reference`.
    pub fn standoff_point(&self, pose: &Pose2, reference: Vec2, clearance: f64) -> Vec2 {
        match self.footprint {
            Footprint::Circle { radius } => {
                let dir = (reference - pose.position())
                    .normalized()
                    .unwrap_or_else(|| Vec2::from_polar(1.0, pose.theta));
                pose.position() + dir * (radius + clearance)
            }
            Footprint::Box { half_x, half_y } => {
                let local = pose.inverse_transform_point(reference);
                let inside = local.x.abs() <= half_x && local.y.abs() <= half_y;
                let out = if inside {
                    // Leave through the nearest face.
                    let gap_x = half_x - local.x.abs();
                    let gap_y = half_y - local.y.abs();
                    if gap_x <= gap_y {
                        Vec2::new(local.x.signum() * (half_x + clearance), local.y)
                    } else {
                        Vec2::new(local.x, local.y.signum() * (half_y + clearance))
                    }
                } else {
                    let near = Vec2::new(local.x.clamp(-half_x, half_x), local.y.clamp(-half_y, half_y));
                    let dir = (local - near).normalized().unwrap_or(Vec2::new(1.0, 0.0));
                    near + dir * clearance
                };
                pose.transform_point(out)
            }
        }
    }
}

/// True when a disc of `radius` centred at `center` strictly overlaps the body.
pub fn disc_overlaps(center: Vec2, radius: f64, pose: &Pose2, shape: &Shape) -> bool {
    match shape.footprint {
        Footprint::Circle { radius: r } => center.distance(pose.position()) < radius + r,
        Footprint::Box { .. } => shape.distance_to_point(pose, center) < radius,
    }
}

/// The person's view volume: a horizontal sector plus a vertical gaze cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frustum {
    /// Half of the horizontal field of view, in (0, π].
    pub half_angle: f64,
    pub range: f64,
    /// Largest angle below the horizontal at which floor-level bodies are still noticed.
    pub gaze_depression: f64,
}

impl Frustum {
    pub fn new(half_angle: f64, range: f64, gaze_depression: f64) -> Result<Self, GeometryError> {
        if !(half_angle > 0.0 && half_angle <= PI) {
            return Err(GeometryError::InvalidFrustum(format!(
                "half_angle must lie in (0, π], got {half_angle}"
            )));
        }
        if !(range > 0.0) {
            return Err(GeometryError::InvalidFrustum(format!("range must be > 0, got {range}")));
        }
        if !(0.0..PI / 2.0).contains(&gaze_depression) {
            return Err(GeometryError::InvalidFrustum(format!(
                "gaze_depression must lie in [0, π/2), got {gaze_depression}"
            )));
        }
        Ok(Self {
            half_angle,
            range,
            gaze_depression,
        })
    }

    pub fn with_gaze(&self, gaze_depression: f64) -> Frustum {
        Frustum {
            gaze_depression,
            ..*self
        }
    }
}

/// Inclusion test of a body in an observer's frustum.
///
/// Distances are planar and centre to centre. The vertical test compares the
/// depression angle to the top of the body against the gaze cutoff; bodies at
/// least as tall as the eye always pass it.
pub fn in_frustum(observer: &Pose2, eye_height: f64, frustum: &Frustum, body_pose: &Pose2, body: &Shape) -> bool {
    let distance = observer.position().distance(body_pose.position());
    if distance <= 1e-12 {
        return true;
    }
    if !in_sector(observer, frustum, body_pose) {
        return false;
    }
    if body.height >= eye_height {
        return true;
    }
    let depression = (eye_height - body.height).atan2(distance);
    depression <= frustum.gaze_depression
}

/// The horizontal part of the view test: within range and within the
/// half-angle of the observer's heading.
pub fn in_sector(observer: &Pose2, frustum: &Frustum, body_pose: &Pose2) -> bool {
    let offset = body_pose.position() - observer.position();
    let distance = offset.norm();
    if distance <= 1e-12 {
        return true;
    }
    if distance > frustum.range {
        return false;
    }
    let bearing = normalize_angle(offset.angle() - observer.theta);
    bearing.abs() <= frustum.half_angle
}

/// First contact found while sweeping a disc along a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweptHit {
    pub arc_length: f64,
    pub obstacle_index: usize,
    pub position: Vec2,
}

fn first_overlap(center: Vec2, radius: f64, obstacles: &[(Pose2, Shape)]) -> Option<usize> {
    obstacles
        .iter()
        .position(|(pose, shape)| disc_overlaps(center, radius, pose, shape))
}

/// Walks `path` at arc-length increments of at most `step` and reports the first
/// arc length where the circular `mover` overlaps an obstacle.
///
/// The sampled contact is refined by bisection on the segment where it was
/// found, so the reported arc length is much tighter than `step`.
pub fn swept_collision(
    path: &[Pose2],
    mover: &Shape,
    obstacles: &[(Pose2, Shape)],
    step: f64,
) -> Result<Option<SweptHit>, GeometryError> {
    if path.is_empty() {
        return Err(GeometryError::EmptyPath);
    }
    let radius = mover.circle_radius().ok_or(GeometryError::NonCircularMover)?;
    if !(step > 0.0) {
        return Err(GeometryError::NonPositiveStep(step));
    }

    let start = path[0].position();
    if let Some(idx) = first_overlap(start, radius, obstacles) {
        return Ok(Some(SweptHit {
            arc_length: 0.0,
            obstacle_index: idx,
            position: start,
        }));
    }

    let mut arc = 0.0;
    for pair in path.windows(2) {
        let (a, b) = (pair[0].position(), pair[1].position());
        let len = a.distance(b);
        if len <= 0.0 {
            continue;
        }
        let n = (len / step).ceil().max(1.0) as usize;
        let mut prev_t = 0.0;
        for k in 1..=n {
            let t = k as f64 / n as f64;
            let p = a.lerp(b, t);
            if first_overlap(p, radius, obstacles).is_some() {
                // Bisect between the last free sample and this one.
                let (mut lo, mut hi) = (prev_t, t);
                for _ in 0..40 {
                    let mid = 0.5 * (lo + hi);
                    if first_overlap(a.lerp(b, mid), radius, obstacles).is_some() {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                let position = a.lerp(b, hi);
                let obstacle_index = first_overlap(position, radius, obstacles).unwrap_or(0);
                return Ok(Some(SweptHit {
                    arc_length: arc + hi * len,
                    obstacle_index,
                    position,
                }));
            }
            prev_t = t;
        }
        arc += len;
    }
    Ok(None)
}

/// Total length of the polyline through the given poses.
pub fn polyline_length(path: &[Pose2]) -> f64 {
    path.windows(2).map(|w| w[0].distance(&w[1])).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: &Pose2, b: &Pose2, tol: f64) -> bool {
        (a.x - b.x).abs() < tol && (a.y - b.y).abs() < tol && normalize_angle(a.theta - b.theta).abs() < tol
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose2 {
        Pose2::new(
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
            rng.random_range(-PI..PI),
        )
    }

    #[test]
    fn normalize_keeps_half_open_interval() {
        assert_eq!(normalize_angle(PI), PI);
        assert_eq!(normalize_angle(-PI), PI);
        assert!((normalize_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((normalize_angle(-PI / 2.0 - 2.0 * PI) + PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn compose_identity_and_rotation() {
        let p = Pose2::new(1.3, -0.2, 0.7);
        assert_eq!(Pose2::IDENTITY.compose(&p), p);
        let r = Pose2::new(1.0, 0.0, PI / 2.0).compose(&Pose2::new(1.0, 0.0, 0.0));
        assert!(close(&r, &Pose2::new(1.0, 1.0, PI / 2.0), 1e-12));
    }

    #[test]
    fn compose_with_inverse_is_identity_on_seeded_poses() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let p = random_pose(&mut rng);
            assert!(close(&p.compose(&p.inverse()), &Pose2::IDENTITY, 1e-9));
            assert!(close(&p.inverse().compose(&p), &Pose2::IDENTITY, 1e-9));
        }
    }

    #[test]
    fn group_laws_hold_on_seeded_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..1000 {
            let (a, b, c) = (random_pose(&mut rng), random_pose(&mut rng), random_pose(&mut rng));
            let left = a.compose(&b).compose(&c);
            let right = a.compose(&b.compose(&c));
            assert!(close(&left, &right, 1e-9), "{left:?} vs {right:?}");
        }
    }

    fn ball() -> Shape {
        Shape::circle(0.15, 0.15).unwrap()
    }

    #[test]
    fn tall_body_straight_ahead_is_visible_at_any_gaze() {
        let robot = Shape::circle(0.35, 1.2).unwrap();
        for gaze in [0.0, 0.2, 1.0] {
            let f = Frustum::new(1.0, 10.0, gaze).unwrap();
            assert!(in_frustum(&Pose2::IDENTITY, 1.0, &f, &Pose2::new(2.0, 0.0, 0.0), &robot));
        }
    }

    #[test]
    fn body_behind_observer_is_not_visible() {
        let f = Frustum::new(PI / 3.0, 10.0, 1.2).unwrap();
        let robot = Shape::circle(0.35, 1.2).unwrap();
        assert!(!in_frustum(&Pose2::IDENTITY, 1.6, &f, &Pose2::new(-2.0, 0.0, 0.0), &robot));
    }

    #[test]
    fn ball_visibility_threshold_matches_trigonometry() {
        // Independent oracle: depression to the ball top from the eye.
        let required = (1.6_f64 - 0.15).atan2(2.0);
        assert!((required.to_degrees() - 35.94).abs() < 0.01);
        let at = |deg: f64| {
            let f = Frustum::new(PI / 3.0, 10.0, deg.to_radians()).unwrap();
            in_frustum(&Pose2::IDENTITY, 1.6, &f, &Pose2::new(2.0, 0.0, 0.0), &ball())
        };
        assert!(!at(30.0));
        assert!(at(50.0));
        assert!(!at(required.to_degrees() - 0.01));
        assert!(at(required.to_degrees() + 0.01));
    }

    #[test]
    fn zero_distance_is_visible() {
        let f = Frustum::new(0.1, 1.0, 0.0).unwrap();
        assert!(in_frustum(&Pose2::new(1.0, 1.0, 2.0), 1.6, &f, &Pose2::new(1.0, 1.0, 0.0), &ball()));
    }

    fn straight(len: f64) -> Vec<Pose2> {
        vec![Pose2::new(0.0, 0.0, PI / 2.0), Pose2::new(0.0, len, PI / 2.0)]
    }

    #[test]
    fn swept_collision_hits_ball_on_corridor() {
        let mover = Shape::circle(0.30, 1.6).unwrap();
        let obstacles = [(Pose2::new(0.0, 2.0, 0.0), ball())];
        let hit = swept_collision(&straight(4.0), &mover, &obstacles, 0.05).unwrap().unwrap();
        assert!((hit.arc_length - 1.55).abs() <= 0.05, "{hit:?}");
        assert_eq!(hit.obstacle_index, 0);
    }

    #[test]
    fn swept_collision_misses_ball_with_lateral_clearance() {
        let mover = Shape::circle(0.30, 1.6).unwrap();
        let obstacles = [(Pose2::new(2.0, 2.0, 0.0), ball())];
        assert!(swept_collision(&straight(4.0), &mover, &obstacles, 0.05).unwrap().is_none());
    }

    #[test]
    fn swept_collision_single_overlapping_pose_hits_at_zero() {
        let mover = Shape::circle(0.30, 1.6).unwrap();
        let obstacles = [(Pose2::new(0.1, 0.0, 0.0), ball())];
        let hit = swept_collision(&[Pose2::IDENTITY], &mover, &obstacles, 0.05).unwrap().unwrap();
        assert_eq!(hit.arc_length, 0.0);
    }

    #[test]
    fn swept_collision_errors() {
        let mover = Shape::circle(0.30, 1.6).unwrap();
        assert_eq!(swept_collision(&[], &mover, &[], 0.05), Err(GeometryError::EmptyPath));
        let boxy = Shape::rect(0.3, 0.3, 1.0).unwrap();
        assert_eq!(
            swept_collision(&straight(1.0), &boxy, &[], 0.05),
            Err(GeometryError::NonCircularMover)
        );
        assert!(swept_collision(&straight(1.0), &mover, &[], 0.0).is_err());
    }

    #[test]
    fn disc_against_rotated_box_uses_closest_point() {
        let couch = Shape::rect(0.9, 0.4, 0.8).unwrap();
        let pose = Pose2::new(3.5, 0.0, PI / 2.0);
        // Rotated: spans x in [3.1, 3.9], y in [-0.9, 0.9].
        assert!(disc_overlaps(Vec2::new(2.85, 0.5), 0.3, &pose, &couch));
        assert!(!disc_overlaps(Vec2::new(2.75, 0.5), 0.3, &pose, &couch));
        assert!(!disc_overlaps(Vec2::new(3.5, 1.25), 0.3, &pose, &couch));
        assert!(disc_overlaps(Vec2::new(3.5, 1.15), 0.3, &pose, &couch));
    }

    #[test]
    fn standoff_points_sit_at_clearance() {
        let couch = Shape::rect(0.9, 0.4, 0.8).unwrap();
        let pose = Pose2::new(3.5, 0.0, PI / 2.0);
        let s = couch.standoff_point(&pose, Vec2::new(-2.5, 0.3), 0.1);
        assert!((s.x - 3.0).abs() < 1e-12 && (s.y - 0.3).abs() < 1e-12, "{s:?}");
        let s = ball().standoff_point(&Pose2::new(1.0, 0.0, 0.0), Vec2::new(-1.0, 0.0), 0.1);
        assert!((s.x - 0.75).abs() < 1e-12 && s.y.abs() < 1e-12);
        let inside = couch.standoff_point(&pose, Vec2::new(3.2, 0.0), 0.1);
        assert!((couch.distance_to_point(&pose, inside) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn shape_validation() {
        assert!(Shape::circle(0.0, 1.0).is_err());
        assert!(Shape::rect(1.0, -1.0, 1.0).is_err());
        assert!(Shape::circle(1.0, -0.1).is_err());
        assert!(Frustum::new(0.0, 1.0, 0.1).is_err());
        assert!(Frustum::new(PI, 1.0, PI / 2.0).is_err());
    }

    proptest! {
        #[test]
        fn visibility_is_monotone_in_gaze_angle_and_range(
            bx in -6.0..6.0f64, by in -6.0..6.0f64, h in 0.0..2.0f64,
            theta in -PI..PI, g1 in 0.0..1.5f64, dg in 0.0..0.05f64,
            half in 0.1..PI, dh in 0.0..0.5f64, range in 0.5..8.0f64, dr in 0.0..2.0f64,
        ) {
            let body = Shape::circle(0.2, h).unwrap();
            let observer = Pose2::new(0.0, 0.0, theta);
            let at = Pose2::new(bx, by, 0.0);
            let base = Frustum::new(half, range, g1).unwrap();
            if in_frustum(&observer, 1.6, &base, &at, &body) {
                let wider_gaze = Frustum::new(half, range, (g1 + dg).min(1.55)).unwrap();
                let wider_angle = Frustum::new((half + dh).min(PI), range, g1).unwrap();
                let longer = Frustum::new(half, range + dr, g1).unwrap();
                prop_assert!(in_frustum(&observer, 1.6, &wider_gaze, &at, &body));
                prop_assert!(in_frustum(&observer, 1.6, &wider_angle, &at, &body));
                prop_assert!(in_frustum(&observer, 1.6, &longer, &at, &body));
            }
        }

        #[test]
        fn swept_presence_is_stable_under_step_halving(
            ox in -3.0..3.0f64, oy in 0.5..3.5f64, r in 0.05..0.4f64, step in 0.02..0.2f64,
        ) {
            let mover = Shape::circle(0.3, 1.6).unwrap();
            let obstacles = [(Pose2::new(ox, oy, 0.0), Shape::circle(r, 0.2).unwrap())];
            // Only fixtures whose clearance from the corridor edge is at least one step.
            let clearance = (ox.abs() - (0.3 + r)).abs();
            prop_assume!(clearance >= step);
            let a = swept_collision(&straight(4.0), &mover, &obstacles, step).unwrap();
            let b = swept_collision(&straight(4.0), &mover, &obstacles, step / 2.0).unwrap();
            prop_assert_eq!(a.is_some(), b.is_some());
            if let (Some(a), Some(b)) = (a, b) {
                prop_assert!((a.arc_length - b.arc_length).abs() <= step);
            }
        }
    }
}
