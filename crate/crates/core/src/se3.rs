//! Rigid-body math foundation: SE(3) poses, unit dual quaternions, screw
//! linear interpolation and wrench frame transforms.
//!
//! Poses are `nalgebra` isometries (translation + unit quaternion). Unit dual
//! quaternions carry the same information in a singularity-free form that
//! supports constant-screw interpolation. Quaternion double cover is resolved
//! by canonicalizing the (real) scalar component to be non-negative.

#[allow(unused_imports)] // f64 math comes from num-traits under no_std
use num_traits::Float;
use nalgebra::{Isometry3, Quaternion, Translation3, UnitQuaternion, Vector3, Vector6};

/// A rigid transform in SE(3): translation in meters, unit-quaternion rotation.
pub type Pose = Isometry3<f64>;

/// A unit dual quaternion representing a rigid transform.
pub type UnitDualQuat = nalgebra::UnitDualQuaternion<f64>;

/// A generalized 6D force: linear force (N) and torque (N·m).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wrench {
    pub force: Vector3<f64>,
    pub torque: Vector3<f64>,
}

impl Wrench {
    pub fn new(force: Vector3<f64>, torque: Vector3<f64>) -> Self {
        Wrench { force, torque }
    }

    pub fn zero() -> Self {
        Wrench { force: Vector3::zeros(), torque: Vector3::zeros() }
    }

    /// Stacked `[force; torque]` 6-vector.
    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.force.x, self.force.y, self.force.z,
            self.torque.x, self.torque.y, self.torque.z,
        )
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Wrench {
            force: Vector3::new(v[0], v[1], v[2]),
            torque: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|x| x.is_finite())
    }
}

impl core::ops::Add for Wrench {
    type Output = Wrench;
    fn add(self, rhs: Wrench) -> Wrench {
        Wrench { force: self.force + rhs.force, torque: self.torque + rhs.torque }
    }
}

/// SE(3) composition `a ∘ b`.
pub fn compose(a: &Pose, b: &Pose) -> Pose {
    a * b
}

pub fn pose_from_parts(position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Pose {
    Pose::from_parts(Translation3::from(position), orientation)
}

/// Resolve the quaternion double cover: scalar component made non-negative.
pub fn canonicalize(q: &UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        *q
    }
}

/// Pose with its rotation canonicalized (`w >= 0`).
pub fn canonical_pose(p: &Pose) -> Pose {
    Pose::from_parts(p.translation, canonicalize(&p.rotation))
}

/// Convert a pose to a unit dual quaternion with canonical real part.
pub fn dq_from_pose(p: &Pose) -> UnitDualQuat {
    let r = canonicalize(&p.rotation);
    let t = p.translation.vector;
    // dual = 1/2 * (0, t) * real
    let tq = Quaternion::new(0.0, t.x, t.y, t.z);
    let dual = tq * r.into_inner() * 0.5;
    UnitDualQuat::new_unchecked(nalgebra::DualQuaternion::from_real_and_dual(
        r.into_inner(),
        dual,
    ))
}

/// Convert a unit dual quaternion back to a pose.
pub fn dq_to_pose(d: &UnitDualQuat) -> Pose {
    let real = canonical_dq(d);
    let r = real.as_ref().real;
    let dual = real.as_ref().dual;
    let tq = dual * r.conjugate() * 2.0;
    pose_from_parts(
        Vector3::new(tq.i, tq.j, tq.k),
        UnitQuaternion::new_unchecked(r),
    )
}

/// Canonicalize the real scalar component of a unit dual quaternion.
pub fn canonical_dq(d: &UnitDualQuat) -> UnitDualQuat {
    if d.as_ref().real.w < 0.0 {
        UnitDualQuat::new_unchecked(nalgebra::DualQuaternion::from_real_and_dual(
            -d.as_ref().real,
            -d.as_ref().dual,
        ))
    } else {
        *d
    }
}

/// Screw parameters of a unit dual quaternion: rotation angle, translation
/// along the axis, axis direction and axis moment.
struct Screw {
    theta: f64,
    d: f64,
    axis: Vector3<f64>,
    moment: Vector3<f64>,
    /// Pure-translation displacement when the rotation is negligible.
    translation: Option<Vector3<f64>>,
}

const PURE_TRANSLATION_EPS: f64 = 1e-9;

fn screw_decompose(d: &UnitDualQuat) -> Screw {
    let q = canonical_dq(d);
    let r = q.as_ref().real;
    let du = q.as_ref().dual;
    let vec_r = Vector3::new(r.i, r.j, r.k);
    let sin_half = vec_r.norm();
    if sin_half < PURE_TRANSLATION_EPS {
        // Identity rotation: the transform is a pure translation.
        let tq = du * r.conjugate() * 2.0;
        return Screw {
            theta: 0.0,
            d: 0.0,
            axis: Vector3::zeros(),
            moment: Vector3::zeros(),
            translation: Some(Vector3::new(tq.i, tq.j, tq.k)),
        };
    }
    let theta = 2.0 * sin_half.atan2(r.w);
    let axis = vec_r / sin_half;
    let trans = -2.0 * du.w / sin_half;
    let vec_d = Vector3::new(du.i, du.j, du.k);
    let cos_half = r.w;
    let moment = (vec_d - axis * (trans / 2.0) * cos_half) / sin_half;
    Screw { theta, d: trans, axis, moment, translation: None }
}

fn screw_compose(s: &Screw, scale: f64) -> UnitDualQuat {
    if let Some(t) = s.translation {
        let t = t * scale;
        return UnitDualQuat::new_unchecked(nalgebra::DualQuaternion::from_real_and_dual(
            Quaternion::new(1.0, 0.0, 0.0, 0.0),
            Quaternion::new(0.0, t.x / 2.0, t.y / 2.0, t.z / 2.0),
        ));
    }
    let half = scale * s.theta / 2.0;
    let (sin_half, cos_half) = (half.sin(), half.cos());
    let d_half = scale * s.d / 2.0;
    let real = Quaternion::new(
        cos_half,
        sin_half * s.axis.x,
        sin_half * s.axis.y,
        sin_half * s.axis.z,
    );
    let dual_vec = s.moment * sin_half + s.axis * d_half * cos_half;
    let dual = Quaternion::new(-d_half * sin_half, dual_vec.x, dual_vec.y, dual_vec.z);
    UnitDualQuat::new_unchecked(nalgebra::DualQuaternion::from_real_and_dual(real, dual))
}

/// Raise a unit dual quaternion to a real power along its constant screw.
pub fn dq_pow(d: &UnitDualQuat, s: f64) -> UnitDualQuat {
    screw_compose(&screw_decompose(d), s)
}

/// Screw linear interpolation between two unit dual quaternions.
///
/// Constant-screw-axis path; `t` must lie in `[0, 1]`. Endpoints are returned
/// exactly.
pub fn sclerp(start: &UnitDualQuat, goal: &UnitDualQuat, t: f64) -> Option<UnitDualQuat> {
    if !(0.0..=1.0).contains(&t) {
        return None;
    }
    if t == 0.0 {
        return Some(canonical_dq(start));
    }
    if t == 1.0 {
        return Some(canonical_dq(goal));
    }
    let a = canonical_dq(start);
    let b = canonical_dq(goal);
    let rel = a.inverse() * b;
    Some(canonical_dq(&(a * dq_pow(&rel, t))))
}

/// Re-express a wrench given the pose of its source frame in the target frame.
///
/// Forces and torques rotate; the torque additionally picks up the moment of
/// the rotated force about the target origin (`τ' = Rτ + p × Rf`).
pub fn transform_wrench(w: &Wrench, frame: &Pose) -> Wrench {
    let f = frame.rotation * w.force;
    let tau = frame.rotation * w.torque + frame.translation.vector.cross(&f);
    Wrench { force: f, torque: tau }
}

/// 6D pose error `[translation; rotation-vector]` taking `from` to `to`,
/// expressed in the world frame.
pub fn pose_error(from: &Pose, to: &Pose) -> Vector6<f64> {
    let dp = to.translation.vector - from.translation.vector;
    let dr = canonicalize(&(to.rotation * from.rotation.inverse()));
    let rv = dr.scaled_axis();
    Vector6::new(dp.x, dp.y, dp.z, rv.x, rv.y, rv.z)
}

/// Rotation-vector (axis-angle) representation of a pose, stacked as
/// `[translation; rotation-vector]`.
pub fn pose_to_vec6(p: &Pose) -> Vector6<f64> {
    let rv = canonicalize(&p.rotation).scaled_axis();
    let t = p.translation.vector;
    Vector6::new(t.x, t.y, t.z, rv.x, rv.y, rv.z)
}

pub fn pose_from_vec6(v: &Vector6<f64>) -> Pose {
    let rv = Vector3::new(v[3], v[4], v[5]);
    pose_from_parts(Vector3::new(v[0], v[1], v[2]), UnitQuaternion::from_scaled_axis(rv))
}
