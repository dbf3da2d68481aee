//! Frame-change offsets for placing mocap-driven elements on goals.
//!
//! Motion-capture roots arrive relative to a fixed capture origin. Putting an
//! avatar whose root sits at anchor `A` onto goal `B` is a rotation by
//! `θ = yaw(B) - yaw(A)` about +Z followed by the translation that carries
//! the rotated anchor `A'` onto `B`. The same pair `(θ, A'B)` applied to every
//! later root sample keeps the performer's motion rigidly re-homed on the goal.
//!
//! All public angles are degrees; rotation is about +Z only.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{Pose, Vec3};

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum StageMathError {
    #[error("fade duration must be positive, got {0}")]
    NonPositiveDuration(f64),
}

/// Wraps an angle in degrees into `[-180, 180)`. Values already in range are
/// returned untouched, so normalization is idempotent bit-for-bit.
pub fn normalize_degrees(angle: f64) -> f64 {
    if (-180.0..180.0).contains(&angle) {
        return angle;
    }
    let wrapped = (angle + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid may round up to exactly 360 for tiny negative inputs
    if wrapped >= 180.0 {
        wrapped - 360.0
    } else {
        wrapped
    }
}

/// Signed shortest difference `a - b`, in `[-180, 180)`.
pub fn angle_difference(a: f64, b: f64) -> f64 {
    normalize_degrees(a - b)
}

/// `(sin, cos)` of an angle in degrees; exact at multiples of 90°.
fn sin_cos_degrees(angle: f64) -> (f64, f64) {
    let a = normalize_degrees(angle);
    if a == 0.0 {
        (0.0, 1.0)
    } else if a == 90.0 {
        (1.0, 0.0)
    } else if a == -90.0 {
        (-1.0, 0.0)
    } else if a == -180.0 {
        (0.0, -1.0)
    } else {
        a.to_radians().sin_cos()
    }
}

/// Rotates `v` about +Z by `angle` degrees. A zero angle returns `v` unchanged.
pub fn rotate_z(v: Vec3, angle: f64) -> Vec3 {
    if angle == 0.0 {
        return v;
    }
    let (s, c) = sin_cos_degrees(angle);
    Vec3::new(v.x * c - v.y * s, v.x * s + v.y * c, v.z)
}

/// A planar rigid transform: rotate by `theta` about +Z, then translate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OffsetTransform {
    pub theta: f64,
    pub translation: Vec3,
}

impl OffsetTransform {
    pub const IDENTITY: OffsetTransform = OffsetTransform {
        theta: 0.0,
        translation: Vec3::ZERO,
    };

    pub fn new(theta: f64, translation: Vec3) -> Self {
        OffsetTransform {
            theta: normalize_degrees(theta),
            translation,
        }
    }

    pub fn translation(translation: Vec3) -> Self {
        OffsetTransform {
            theta: 0.0,
            translation,
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    pub fn apply_point(&self, p: Vec3) -> Vec3 {
        rotate_z(p, self.theta) + self.translation
    }
}

/// The offset that carries `anchor` exactly onto `goal`.
pub fn compute_offset(anchor: &Pose, goal: &Pose) -> OffsetTransform {
    let theta = angle_difference(goal.yaw, anchor.yaw);
    let translation = goal.position - rotate_z(anchor.position, theta);
    OffsetTransform { theta, translation }
}

pub fn apply_offset(offset: &OffsetTransform, pose: &Pose) -> Pose {
    Pose {
        position: offset.apply_point(pose.position),
        yaw: normalize_degrees(pose.yaw + offset.theta),
    }
}

/// Re-homes a streamed frame: only the root moves, joints are root-relative.
pub fn apply_offset_frame(offset: &OffsetTransform, frame: &SkeletonFrame) -> SkeletonFrame {
    if offset.is_identity() {
        return frame.clone();
    }
    SkeletonFrame {
        root: apply_offset(offset, &frame.root),
        ..frame.clone()
    }
}

/// An offset that turns an element on itself: the current root position is
/// the fixed point and the heading advances by `delta_yaw`.
pub fn rotate_in_place(current_root: &Pose, delta_yaw: f64) -> OffsetTransform {
    let theta = normalize_degrees(delta_yaw);
    let translation = current_root.position - rotate_z(current_root.position, theta);
    OffsetTransform { theta, translation }
}

/// `compose(outer, inner)` applies `inner` first, then `outer`.
pub fn compose(outer: &OffsetTransform, inner: &OffsetTransform) -> OffsetTransform {
    OffsetTransform {
        theta: normalize_degrees(outer.theta + inner.theta),
        translation: rotate_z(inner.translation, outer.theta) + outer.translation,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FadeDirection {
    In,
    Out,
}

/// Linear, clamped fade ramp. `In` rises 0 → 1 over `duration`, `Out` falls 1 → 0.
pub fn fade_level(elapsed: f64, duration: f64, direction: FadeDirection) -> Result<f64, StageMathError> {
    if !duration.is_finite() || duration <= 0.0 {
        return Err(StageMathError::NonPositiveDuration(duration));
    }
    let progress = (elapsed.max(0.0) / duration).min(1.0);
    Ok(match direction {
        FadeDirection::In => progress,
        FadeDirection::Out => 1.0 - progress,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Quat {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub w: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        x: 0.0,
        y: 0.0,
        z: 0.0,
        w: 1.0,
    };

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z + self.w * self.w).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.w.is_finite()
    }

    pub fn is_unit(&self) -> bool {
        self.is_finite() && (self.norm() - 1.0).abs() <= 1e-6
    }
}

impl From<[f64; 4]> for Quat {
    fn from([x, y, z, w]: [f64; 4]) -> Self {
        Quat { x, y, z, w }
    }
}

impl From<Quat> for [f64; 4] {
    fn from(q: Quat) -> Self {
        [q.x, q.y, q.z, q.w]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    pub rotation: Quat,
}

/// One timestamped motion-capture sample for a named subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonFrame {
    pub subject: String,
    pub timestamp: f64,
    pub root: Pose,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub joints: Vec<Joint>,
}

impl SkeletonFrame {
    pub fn new(subject: impl Into<String>, timestamp: f64, root: Pose) -> Self {
        SkeletonFrame {
            subject: subject.into(),
            timestamp,
            root,
            joints: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pose(x: f64, y: f64, z: f64, yaw: f64) -> Pose {
        Pose::new(Vec3::new(x, y, z), yaw)
    }

    fn close(a: Vec3, b: Vec3) -> bool {
        (a - b).norm() < 1e-9
    }

    #[test]
    fn normalization_half_open() {
        assert_eq!(normalize_degrees(180.0), -180.0);
        assert_eq!(normalize_degrees(-180.0), -180.0);
        assert_eq!(normalize_degrees(540.0), -180.0);
        assert_eq!(normalize_degrees(359.0), -1.0);
        assert_eq!(normalize_degrees(-190.0), 170.0);
        assert_eq!(normalize_degrees(12.5), 12.5);
        let tiny = normalize_degrees(-1e-18 - 180.0);
        assert!((-180.0..180.0).contains(&tiny));
    }

    #[test]
    fn compute_offset_examples() {
        let o = compute_offset(&Pose::IDENTITY, &Pose::IDENTITY);
        assert_eq!(o, OffsetTransform::IDENTITY);

        let o = compute_offset(&Pose::IDENTITY, &pose(5.0, 0.0, 0.0, 0.0));
        assert_eq!(o, OffsetTransform::new(0.0, Vec3::new(5.0, 0.0, 0.0)));

        // R90 (1,0) = (0,1); t = (0,3) - (0,1)
        let o = compute_offset(&pose(1.0, 0.0, 0.0, 0.0), &pose(0.0, 3.0, 0.0, 90.0));
        assert_eq!(o.theta, 90.0);
        assert!(close(o.translation, Vec3::new(0.0, 2.0, 0.0)));
    }

    #[test]
    fn apply_offset_examples() {
        let p = pose(1.5, -2.0, 0.3, 42.0);
        assert_eq!(apply_offset(&OffsetTransform::IDENTITY, &p), p);

        let o = OffsetTransform::new(90.0, Vec3::new(0.0, 2.0, 0.0));
        let q = apply_offset(&o, &pose(2.0, 0.0, 0.0, 0.0));
        assert!(close(q.position, Vec3::new(0.0, 4.0, 0.0)));
        assert_eq!(q.yaw, 90.0);
    }

    #[test]
    fn frame_offset_moves_root_only() {
        let mut frame = SkeletonFrame::new("subject1", 1.0, Pose::IDENTITY);
        frame.joints.push(Joint {
            name: "spine".into(),
            rotation: Quat { x: 0.0, y: 0.0, z: 0.38268343236, w: 0.92387953251 },
        });
        assert_eq!(apply_offset_frame(&OffsetTransform::IDENTITY, &frame), frame);

        let moved = apply_offset_frame(&OffsetTransform::translation(Vec3::new(5.0, 0.0, 0.0)), &frame);
        assert_eq!(moved.root, pose(5.0, 0.0, 0.0, 0.0));
        assert_eq!(moved.joints, frame.joints);
        assert_eq!(moved.subject, frame.subject);
        assert_eq!(moved.timestamp, frame.timestamp);

        frame.root = pose(2.0, 0.0, 0.0, 0.0);
        let turned = apply_offset_frame(&OffsetTransform::new(90.0, Vec3::new(0.0, 2.0, 0.0)), &frame);
        assert!(close(turned.root.position, Vec3::new(0.0, 4.0, 0.0)));
        assert_eq!(turned.root.yaw, 90.0);
    }

    #[test]
    fn rotate_in_place_examples() {
        let root = pose(3.0, -1.0, 0.0, 10.0);
        let o = rotate_in_place(&root, 0.0);
        assert_eq!(apply_offset(&o, &root), root);

        assert_eq!(
            rotate_in_place(&Pose::IDENTITY, 90.0),
            OffsetTransform::new(90.0, Vec3::ZERO)
        );

        // fixed point: t = (1,0) - R90 (1,0) = (1,-1)
        let o = rotate_in_place(&pose(1.0, 0.0, 0.0, 0.0), 90.0);
        assert_eq!(o.theta, 90.0);
        assert!(close(o.translation, Vec3::new(1.0, -1.0, 0.0)));
    }

    #[test]
    fn compose_examples() {
        let x = OffsetTransform::new(33.0, Vec3::new(1.0, -2.0, 0.5));
        assert_eq!(compose(&OffsetTransform::IDENTITY, &x), x);
        assert_eq!(compose(&x, &OffsetTransform::IDENTITY), x);

        let a = OffsetTransform::translation(Vec3::new(1.0, 2.0, 0.0));
        let b = OffsetTransform::translation(Vec3::new(-0.5, 4.0, 1.0));
        assert_eq!(compose(&a, &b), OffsetTransform::translation(Vec3::new(0.5, 6.0, 1.0)));
    }

    /// Golden vector frozen from the 3x3 homogeneous product
    /// [R90 | (1,0)] * [R90 | (0,1)] = [R180 | (0,0)].
    #[test]
    fn compose_quarter_turns_golden() {
        let outer = OffsetTransform::new(90.0, Vec3::new(1.0, 0.0, 0.0));
        let inner = OffsetTransform::new(90.0, Vec3::new(0.0, 1.0, 0.0));
        let c = compose(&outer, &inner);
        assert_eq!(c.theta, -180.0);
        assert!(c.translation.norm() < 1e-12);
    }

    #[test]
    fn fade_examples() {
        assert_eq!(fade_level(0.0, 2.0, FadeDirection::In).unwrap(), 0.0);
        assert_eq!(fade_level(2.0, 2.0, FadeDirection::In).unwrap(), 1.0);
        assert_eq!(fade_level(1.0, 2.0, FadeDirection::Out).unwrap(), 0.5);
        assert_eq!(fade_level(5.0, 2.0, FadeDirection::In).unwrap(), 1.0);
        assert_eq!(fade_level(0.0, 2.0, FadeDirection::Out).unwrap(), 1.0);
        assert_eq!(
            fade_level(1.0, 0.0, FadeDirection::In),
            Err(StageMathError::NonPositiveDuration(0.0))
        );
        assert!(fade_level(1.0, -1.0, FadeDirection::Out).is_err());
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (-50.0..50.0f64, -50.0..50.0f64, -5.0..5.0f64, -720.0..720.0f64)
            .prop_map(|(x, y, z, yaw)| pose(x, y, z, yaw))
    }

    fn arb_offset() -> impl Strategy<Value = OffsetTransform> {
        (-720.0..720.0f64, -50.0..50.0f64, -50.0..50.0f64, -5.0..5.0f64)
            .prop_map(|(t, x, y, z)| OffsetTransform::new(t, Vec3::new(x, y, z)))
    }

    proptest! {
        #[test]
        fn normalized_range(a in -1e6..1e6f64) {
            let n = normalize_degrees(a);
            prop_assert!((-180.0..180.0).contains(&n));
            prop_assert!(angle_difference(n, a).abs() < 1e-6);
            prop_assert_eq!(normalize_degrees(n), n);
        }

        #[test]
        fn rigidity(o in arb_offset(), p in arb_pose(), q in arb_pose()) {
            let d0 = p.position.distance(&q.position);
            let d1 = apply_offset(&o, &p).position.distance(&apply_offset(&o, &q).position);
            prop_assert!((d0 - d1).abs() < 1e-9);
        }

        #[test]
        fn compose_matches_sequential(a in arb_offset(), b in arb_offset(), p in arb_pose()) {
            let lhs = apply_offset(&compose(&a, &b), &p);
            let rhs = apply_offset(&a, &apply_offset(&b, &p));
            prop_assert!(close(lhs.position, rhs.position));
            prop_assert!(angle_difference(lhs.yaw, rhs.yaw).abs() < 1e-9);
        }

        #[test]
        fn compose_associative(a in arb_offset(), b in arb_offset(), c in arb_offset()) {
            let l = compose(&compose(&a, &b), &c);
            let r = compose(&a, &compose(&b, &c));
            prop_assert!(close(l.translation, r.translation));
            prop_assert!(angle_difference(l.theta, r.theta).abs() < 1e-9);
        }

        #[test]
        fn rotate_in_place_fixed_point(root in arb_pose(), delta in -720.0..720.0f64) {
            let moved = apply_offset(&rotate_in_place(&root, delta), &root);
            prop_assert!(close(moved.position, root.position));
            prop_assert!(angle_difference(moved.yaw, root.yaw + delta).abs() < 1e-9);
        }
    }
}
